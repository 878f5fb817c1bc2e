//! Pose evaluation: MPJPE (millimeters) and MPJAE (degrees).
//!
//! Positions are compared root-relative; both inputs are re-rooted at joint 0
//! before comparison. Angular errors use the same clamped trace-angle core as
//! the geodesic loss, converted to degrees only here.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{global_rotations, KinematicTree, Pose3D};
use crate::so3::{geodesic_distance, JointRotations};

pub const M_TO_MM: f64 = 1000.0;

/// Named joint subsets bound to the shipped tree presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetPreset {
    Body22,
    Body26,
}

impl SubsetPreset {
    pub fn name(self) -> &'static str {
        match self {
            SubsetPreset::Body22 => "body22",
            SubsetPreset::Body26 => "body26",
        }
    }

    fn reference(self) -> KinematicTree {
        match self {
            SubsetPreset::Body22 => KinematicTree::body22(),
            SubsetPreset::Body26 => KinematicTree::body26(),
        }
    }

    /// Joint indices of the preset in `tree`, which must carry the preset's
    /// joints (by name, in order) as a prefix.
    pub fn indices(self, tree: &KinematicTree) -> Result<Vec<usize>> {
        let reference = self.reference();
        let n = reference.len();
        if tree.len() < n {
            return Err(Error::PresetIncompatible {
                preset: self.name().into(),
                reason: format!("tree has {} joints, preset needs {n}", tree.len()),
            });
        }
        if let Some(k) = (0..n).find(|&k| tree.joint_names()[k] != reference.joint_names()[k]) {
            return Err(Error::PresetIncompatible {
                preset: self.name().into(),
                reason: format!(
                    "joint {k} is `{}`, preset expects `{}`",
                    tree.joint_names()[k],
                    reference.joint_names()[k]
                ),
            });
        }
        Ok((0..n).collect())
    }
}

impl FromStr for SubsetPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "body22" => Ok(SubsetPreset::Body22),
            "body26" => Ok(SubsetPreset::Body26),
            other => Err(Error::PresetIncompatible {
                preset: other.into(),
                reason: "unknown preset".into(),
            }),
        }
    }
}

fn check_subset(subset: &[usize], joints: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    if let Some(&index) = subset.iter().find(|&&i| i >= joints) {
        return Err(Error::JointOutOfRange { index, joints });
    }
    Ok(())
}

/// Per-joint angular error in degrees for the joints in `subset`.
pub fn per_joint_angular_errors(
    pred: &JointRotations,
    gt: &JointRotations,
    subset: &[usize],
) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::mismatch("joint rotations", gt.len(), pred.len()));
    }
    check_subset(subset, gt.len())?;
    Ok(subset
        .iter()
        .map(|&k| geodesic_distance(&gt[k], &pred[k]).to_degrees())
        .collect())
}

/// Mean per-joint angular error in degrees.
pub fn mpjae(pred: &JointRotations, gt: &JointRotations, subset: &[usize]) -> Result<f64> {
    let errs = per_joint_angular_errors(pred, gt, subset)?;
    Ok(mean(&errs))
}

/// MPJAE on world rotations instead of parent-relative ones.
pub fn mpjae_global(
    tree: &KinematicTree,
    pred: &JointRotations,
    gt: &JointRotations,
    subset: &[usize],
) -> Result<f64> {
    mpjae(&global_rotations(tree, pred)?, &global_rotations(tree, gt)?, subset)
}

/// Per-joint Euclidean error in millimeters after re-rooting both poses.
pub fn per_joint_position_errors(pred: &Pose3D, gt: &Pose3D, subset: &[usize]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::mismatch("joint positions", gt.len(), pred.len()));
    }
    check_subset(subset, gt.len())?;
    let (p0, g0) = (pred.positions[0], gt.positions[0]);
    Ok(subset
        .iter()
        .map(|&k| ((pred.positions[k] - p0) - (gt.positions[k] - g0)).norm() * M_TO_MM)
        .collect())
}

/// Root-relative mean per-joint position error in millimeters.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D, subset: &[usize]) -> Result<f64> {
    let errs = per_joint_position_errors(pred, gt, subset)?;
    Ok(mean(&errs))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Which rotations MPJAE compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationFrame {
    #[default]
    ParentRelative,
    Global,
}

/// Aggregate and per-joint errors over a set of frames. Per-joint values are
/// averaged over frames; aggregates are the mean of the per-joint values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_mm: Option<f64>,
    pub mpjae_deg: Option<f64>,
    pub per_joint_mpjpe: Vec<f64>,
    pub per_joint_mpjae: Vec<f64>,
    pub joint_subset: Vec<usize>,
    pub frames: usize,
}

/// Accumulates per-frame errors into a [`MetricReport`].
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    subset: Vec<usize>,
    frame: RotationFrame,
    position_sums: Vec<f64>,
    position_frames: usize,
    angle_sums: Vec<f64>,
    angle_frames: usize,
    frames: usize,
}

impl MetricAccumulator {
    pub fn new(subset: Vec<usize>, frame: RotationFrame) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::EmptySubset);
        }
        let n = subset.len();
        Ok(MetricAccumulator {
            subset,
            frame,
            position_sums: vec![0.0; n],
            position_frames: 0,
            angle_sums: vec![0.0; n],
            angle_frames: 0,
            frames: 0,
        })
    }

    pub fn add_positions(&mut self, pred: &Pose3D, gt: &Pose3D) -> Result<()> {
        let errs = per_joint_position_errors(pred, gt, &self.subset)?;
        for (s, e) in self.position_sums.iter_mut().zip(errs) {
            *s += e;
        }
        self.position_frames += 1;
        Ok(())
    }

    pub fn add_rotations(
        &mut self,
        tree: &KinematicTree,
        pred: &JointRotations,
        gt: &JointRotations,
    ) -> Result<()> {
        let errs = match self.frame {
            RotationFrame::ParentRelative => per_joint_angular_errors(pred, gt, &self.subset)?,
            RotationFrame::Global => per_joint_angular_errors(
                &global_rotations(tree, pred)?,
                &global_rotations(tree, gt)?,
                &self.subset,
            )?,
        };
        for (s, e) in self.angle_sums.iter_mut().zip(errs) {
            *s += e;
        }
        self.angle_frames += 1;
        Ok(())
    }

    pub fn end_frame(&mut self) {
        self.frames += 1;
    }

    pub fn finish(self) -> MetricReport {
        let per_joint = |sums: Vec<f64>, n: usize| -> Vec<f64> {
            if n == 0 {
                Vec::new()
            } else {
                sums.into_iter().map(|s| s / n as f64).collect()
            }
        };
        let per_joint_mpjpe = per_joint(self.position_sums, self.position_frames);
        let per_joint_mpjae = per_joint(self.angle_sums, self.angle_frames);
        MetricReport {
            mpjpe_mm: (!per_joint_mpjpe.is_empty()).then(|| mean(&per_joint_mpjpe)),
            mpjae_deg: (!per_joint_mpjae.is_empty()).then(|| mean(&per_joint_mpjae)),
            per_joint_mpjpe,
            per_joint_mpjae,
            joint_subset: self.subset,
            frames: self.frames,
        }
    }
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub loss: String,
    pub wba: bool,
    pub mpjpe_mm: Option<f64>,
    pub mpjae_deg: Option<f64>,
}

/// Aligned text table with `Model | L_angle | WBA | MPJPE | MPJAE` columns.
/// The lowest MPJPE and MPJAE are marked with `*`.
pub fn format_table(rows: &[TableRow]) -> String {
    let best = |f: fn(&TableRow) -> Option<f64>| {
        rows.iter()
            .filter_map(f)
            .filter(|v| v.is_finite())
            .fold(f64::INFINITY, f64::min)
    };
    let best_pe = best(|r| r.mpjpe_mm);
    let best_ae = best(|r| r.mpjae_deg);
    let cell = |v: Option<f64>, best: f64| match v {
        Some(v) if v.is_finite() => {
            format!("{v:.2}{}", if v == best { "*" } else { " " })
        }
        Some(_) => "diverged ".into(),
        None => "- ".into(),
    };

    let header = ["Model", "L_angle", "WBA", "MPJPE [mm]", "MPJAE [deg]"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                r.loss.clone(),
                if r.wba { "yes".into() } else { "-".into() },
                cell(r.mpjpe_mm, best_pe),
                cell(r.mpjae_deg, best_ae),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let _ = writeln!(
            out,
            "{:<w0$} | {:<w1$} | {:<w2$} | {:>w3$} | {:>w4$}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            cells[4],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
            w4 = widths[4],
        );
    };
    line(&mut out, &header.map(String::from));
    let rule: usize = widths.iter().sum::<usize>() + 3 * 4;
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in &body {
        line(&mut out, row);
    }
    out
}
