//! Horizontal flipping and within-batch augmentation.
//!
//! Positions are mirrored across the `x = 0` plane. Rotations are conjugated
//! by the reflection `M = diag(−1, 1, 1)`, `R ↦ M·R·M`, which keeps them in
//! SO(3). Every per-joint payload is then permuted with the tree's
//! left/right map.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::fk::{Pose, Pose2D, Pose3D};
use super::sequence::{Frame, PoseSequence};
use super::tree::{BodyShape, KinematicTree};
use crate::error::{Error, Result};
use crate::so3::{JointRotations, RotMatrix};

pub trait Flip: Sized {
    fn flipped(&self, tree: &KinematicTree) -> Self;
}

fn permute<T: Clone>(tree: &KinematicTree, values: &[T]) -> Vec<T> {
    // out[mirror(k)] = values[k]; the map is an involution so this is a gather.
    (0..values.len()).map(|j| values[tree.mirror(j)].clone()).collect()
}

pub fn mirror_rotation(r: &RotMatrix) -> RotMatrix {
    let m = r.matrix();
    // M·R·M negates the entries where exactly one index is 0.
    let mut out: Matrix3<f64> = *m;
    for i in 0..3 {
        for j in 0..3 {
            if (i == 0) != (j == 0) {
                out[(i, j)] = -out[(i, j)];
            }
        }
    }
    RotMatrix::from_matrix_unchecked(out)
}

fn mirror_point(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-p.x, p.y, p.z)
}

impl Flip for JointRotations {
    fn flipped(&self, tree: &KinematicTree) -> Self {
        let mirrored: Vec<RotMatrix> = self.iter().map(mirror_rotation).collect();
        JointRotations::new(permute(tree, &mirrored))
    }
}

impl Flip for Pose {
    fn flipped(&self, tree: &KinematicTree) -> Self {
        Pose::new(self.rotations.flipped(tree))
    }
}

impl Flip for Pose3D {
    fn flipped(&self, tree: &KinematicTree) -> Self {
        let mirrored: Vec<_> = self.positions.iter().map(mirror_point).collect();
        Pose3D::new(permute(tree, &mirrored))
    }
}

impl Flip for Pose2D {
    fn flipped(&self, tree: &KinematicTree) -> Self {
        let mirrored: Vec<_> = self
            .positions
            .iter()
            .map(|p| nalgebra::Vector2::new(-p.x, p.y))
            .collect();
        Pose2D::new(permute(tree, &mirrored))
    }
}

impl Flip for BodyShape {
    fn flipped(&self, tree: &KinematicTree) -> Self {
        BodyShape {
            bone_scales: permute(tree, &self.bone_scales),
        }
    }
}

impl Flip for Frame {
    fn flipped(&self, tree: &KinematicTree) -> Self {
        Frame {
            timestamp: self.timestamp,
            pose2d: self.pose2d.flipped(tree),
            pose3d: self.pose3d.as_ref().map(|p| p.flipped(tree)),
            rotations: self.rotations.as_ref().map(|r| r.flipped(tree)),
            provenance: self.provenance.clone(),
            ik: self.ik,
        }
    }
}

impl Flip for PoseSequence {
    fn flipped(&self, tree: &KinematicTree) -> Self {
        PoseSequence {
            frames: self.frames.iter().map(|f| f.flipped(tree)).collect(),
            frame_rate: self.frame_rate,
        }
    }
}

/// How the flipped half of a batch is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WbaPairing {
    /// `[w₀ … w_{n/2−1}, flip(w₀) … flip(w_{n/2−1})]`
    Duplicate,
    /// `[w₀ … w_{n/2−1}, flip(w_{n/2}) … flip(w_{n−1})]`
    #[default]
    FlipDistinct,
}

/// First half of the batch unchanged, second half horizontally flipped,
/// index-aligned.
pub fn build_wba_batch<T: Flip + Clone>(
    tree: &KinematicTree,
    batch: &[T],
    pairing: WbaPairing,
) -> Result<Vec<T>> {
    if batch.len() % 2 != 0 {
        return Err(Error::OddBatch(batch.len()));
    }
    let half = batch.len() / 2;
    let mut out: Vec<T> = batch[..half].to_vec();
    let source = match pairing {
        WbaPairing::Duplicate => &batch[..half],
        WbaPairing::FlipDistinct => &batch[half..],
    };
    out.extend(source.iter().map(|w| w.flipped(tree)));
    Ok(out)
}
