//! Per-frame regressor from 2D keypoints to joint rotations and positions.
//!
//! One tanh hidden layer feeds a rotation head (raw values in the chosen
//! representation) and, for the naive head, a separate position head. The FK
//! head instead obtains positions by running forward kinematics on the
//! decoded rotations. Gradients are derived by hand.

use std::ops::Range;

use nalgebra::{DMatrixView, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    fk_backprop, forward_kinematics, BodyShape, Flip, Frame, KinematicTree, Pose2D, Pose3D,
    WbaPairing,
};
use crate::so3::{joint_loss, DecodedRotation, JointRotations, LossKind, Representation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Separate position and rotation heads.
    #[default]
    Naive,
    /// Positions from forward kinematics of the predicted rotations.
    Fk,
}

impl Head {
    pub fn prefix(self) -> &'static str {
        match self {
            Head::Naive => "N",
            Head::Fk => "S",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub representation: Representation,
    pub loss: LossKind,
    pub wba: bool,
    pub wba_pairing: WbaPairing,
    pub head: Head,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the rotation loss relative to the position loss.
    pub loss_weight_lambda: f64,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            representation: Representation::Matrix,
            loss: LossKind::Geodesic,
            wba: false,
            wba_pairing: WbaPairing::default(),
            head: Head::Naive,
            hidden_width: 64,
            learning_rate: 0.05,
            epochs: 40,
            batch_size: 32,
            loss_weight_lambda: 1.0,
            seed: 0,
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.hidden_width == 0 || self.epochs == 0 {
            return bad("hidden_width and epochs must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.wba && self.batch_size % 2 != 0 {
            return bad("batch_size must be even with WBA");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.loss_weight_lambda >= 0.0) || !self.loss_weight_lambda.is_finite() {
            return bad("loss_weight_lambda must be non-negative");
        }
        Ok(())
    }

    /// Table code such as `N-RM-2`: head, representation, then
    /// 1 = MSE, 2 = geodesic, 3 = MSE + WBA, 4 = geodesic + WBA.
    pub fn model_code(&self) -> String {
        let variant = match (self.loss, self.wba) {
            (LossKind::Mse, false) => 1,
            (LossKind::Geodesic, false) => 2,
            (LossKind::Mse, true) => 3,
            (LossKind::Geodesic, true) => 4,
        };
        format!(
            "{}-{}-{variant}",
            self.head.prefix(),
            self.representation.code()
        )
    }
}

/// One supervised training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Root-centered 2D keypoints.
    pub pose2d: Pose2D,
    /// Root-relative 3D positions.
    pub positions: Pose3D,
    pub rotations: JointRotations,
}

impl Sample {
    pub fn from_frame(frame: &Frame) -> Result<Self> {
        let missing = |what: &str| Error::InvalidSequence(format!("frame at t={} has no {what}", frame.timestamp));
        let positions = frame.pose3d.as_ref().ok_or_else(|| missing("pose3d"))?;
        let rotations = frame.rotations.as_ref().ok_or_else(|| missing("rotations"))?;
        Ok(Sample {
            pose2d: center_2d(&frame.pose2d),
            positions: positions.rerooted(0),
            rotations: rotations.clone(),
        })
    }
}

fn center_2d(pose: &Pose2D) -> Pose2D {
    let root = pose.positions.first().copied().unwrap_or_default();
    Pose2D::new(pose.positions.iter().map(|p| p - root).collect())
}

impl Flip for Sample {
    fn flipped(&self, tree: &KinematicTree) -> Self {
        Sample {
            pose2d: self.pose2d.flipped(tree),
            positions: self.positions.flipped(tree),
            rotations: self.rotations.flipped(tree),
        }
    }
}

/// Offsets of the parameter blocks inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    inputs: usize,
    hidden: usize,
    rot_out: usize,
    pos_out: usize,
}

impl Layout {
    fn w1(&self) -> Range<usize> {
        0..self.hidden * self.inputs
    }
    fn b1(&self) -> Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }
    fn w2(&self) -> Range<usize> {
        let s = self.b1().end;
        s..s + self.rot_out * self.hidden
    }
    fn b2(&self) -> Range<usize> {
        let s = self.w2().end;
        s..s + self.rot_out
    }
    fn w3(&self) -> Range<usize> {
        let s = self.b2().end;
        s..s + self.pos_out * self.hidden
    }
    fn b3(&self) -> Range<usize> {
        let s = self.w3().end;
        s..s + self.pos_out
    }
    fn len(&self) -> usize {
        self.b3().end
    }
}

/// What a forward pass keeps for the backward pass.
struct Activations {
    x: DVector<f64>,
    h: DVector<f64>,
    decoded: Vec<DecodedRotation>,
    rotations: JointRotations,
    positions: Vec<Vector3<f64>>,
    globals: Option<JointRotations>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    tree: KinematicTree,
    shape: BodyShape,
    representation: Representation,
    head: Head,
    layout: Layout,
    theta: Vec<f64>,
}

/// `dst += scale · g xᵀ` for a column-major `g.len() × x.len()` block.
fn add_outer(dst: &mut [f64], g: &DVector<f64>, x: &DVector<f64>) {
    let rows = g.len();
    for (j, xj) in x.iter().enumerate() {
        let col = &mut dst[j * rows..(j + 1) * rows];
        for (d, gi) in col.iter_mut().zip(g.iter()) {
            *d += gi * xj;
        }
    }
}

fn add_into(dst: &mut [f64], g: &DVector<f64>) {
    for (d, gi) in dst.iter_mut().zip(g.iter()) {
        *d += gi;
    }
}

impl Regressor {
    /// Randomly initialized regressor. Hidden and output weights are drawn
    /// with standard deviation `1/√fan_in`; the rotation bias starts at the
    /// identity encoding.
    pub fn new(
        tree: &KinematicTree,
        representation: Representation,
        head: Head,
        hidden: usize,
        seed: u64,
    ) -> Self {
        let n = tree.len();
        let layout = Layout {
            inputs: 2 * n,
            hidden,
            rot_out: n * representation.dim(),
            pos_out: if head == Head::Naive { 3 * n } else { 0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; layout.len()];
        let mut fill = |range: Range<usize>, fan_in: usize| {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            for v in &mut theta[range] {
                *v = normal.sample(&mut rng);
            }
        };
        fill(layout.w1(), layout.inputs);
        fill(layout.w2(), hidden);
        fill(layout.w3(), hidden);
        let identity = representation.encode(&Default::default());
        for (k, chunk) in theta[layout.b2()].chunks_exact_mut(representation.dim()).enumerate() {
            debug_assert!(k < n);
            chunk.copy_from_slice(&identity);
        }
        Regressor {
            tree: tree.clone(),
            shape: BodyShape::uniform(n),
            representation,
            head,
            layout,
            theta,
        }
    }

    pub fn tree(&self) -> &KinematicTree {
        &self.tree
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn parameters(&self) -> &[f64] {
        &self.theta
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Index range of the rotation-head weights and biases.
    pub fn rotation_head(&self) -> Range<usize> {
        self.layout.w2().start..self.layout.b2().end
    }

    fn view(&self, range: Range<usize>, rows: usize) -> DMatrixView<'_, f64> {
        let cols = range.len() / rows.max(1);
        DMatrixView::from_slice(&self.theta[range], rows, cols)
    }

    fn forward(&self, pose2d: &Pose2D) -> Result<Activations> {
        let n = self.tree.len();
        if pose2d.len() != n {
            return Err(Error::mismatch("2D keypoints", n, pose2d.len()));
        }
        let l = &self.layout;
        let centered = center_2d(pose2d);
        let x = DVector::from_iterator(2 * n, centered.positions.iter().flat_map(|p| [p.x, p.y]));
        let b1 = DVector::from_column_slice(&self.theta[l.b1()]);
        let h = (self.view(l.w1(), l.hidden) * &x + b1).map(f64::tanh);
        let raw = self.view(l.w2(), l.rot_out) * &h + DVector::from_column_slice(&self.theta[l.b2()]);
        let decoded: Vec<DecodedRotation> = raw
            .as_slice()
            .chunks_exact(self.representation.dim())
            .map(|c| self.representation.decode_with_state(c))
            .collect();
        let rotations: JointRotations = decoded.iter().map(|d| d.rotation).collect();
        let (positions, globals) = match self.head {
            Head::Naive => {
                let out = self.view(l.w3(), l.pos_out) * &h
                    + DVector::from_column_slice(&self.theta[l.b3()]);
                let positions = out
                    .as_slice()
                    .chunks_exact(3)
                    .map(|c| Vector3::new(c[0], c[1], c[2]))
                    .collect();
                (positions, None)
            }
            Head::Fk => {
                let fk = forward_kinematics(&self.tree, &self.shape, &rotations)?;
                (fk.positions.positions, Some(fk.global_rotations))
            }
        };
        Ok(Activations {
            x,
            h,
            decoded,
            rotations,
            positions,
            globals,
        })
    }

    /// Predicted parent-relative rotations and root-relative positions.
    pub fn predict(&self, pose2d: &Pose2D) -> Result<(JointRotations, Pose3D)> {
        let a = self.forward(pose2d)?;
        Ok((a.rotations, Pose3D::new(a.positions).rerooted(0)))
    }

    /// Mean over the batch of `L_joint + λ·L_angle`.
    pub fn batch_loss(&self, batch: &[Sample], loss: LossKind, lambda: f64) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            let a = self.forward(&s.pose2d)?;
            total += self.sample_loss(&a, s, loss, lambda, 0.0, None);
        }
        Ok(total / batch.len() as f64)
    }

    /// Batch loss and its gradient with respect to [`Regressor::parameters`].
    pub fn batch_loss_and_gradient(
        &self,
        batch: &[Sample],
        loss: LossKind,
        lambda: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let inv_b = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.theta.len()];
        let mut total = 0.0;
        for s in batch {
            let a = self.forward(&s.pose2d)?;
            total += self.sample_loss(&a, s, loss, lambda, inv_b, Some(&mut grad));
        }
        Ok((total * inv_b, grad))
    }

    /// Position loss only, `(1/n)·Σ‖p̂ − p‖²`, for given rotations through
    /// the FK layer.
    pub fn fk_joint_loss(&self, rotations: &JointRotations, positions: &Pose3D) -> Result<f64> {
        let fk = forward_kinematics(&self.tree, &self.shape, rotations)?;
        Ok(joint_position_loss(&fk.positions.positions, &positions.positions))
    }

    fn sample_loss(
        &self,
        a: &Activations,
        s: &Sample,
        loss: LossKind,
        lambda: f64,
        weight: f64,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let n = self.tree.len();
        let nf = n as f64;
        let d = self.representation.dim();
        let joint_value = joint_position_loss(&a.positions, &s.positions.positions);

        let mut angle_value = 0.0;
        let mut g_raw = DVector::zeros(self.layout.rot_out);
        for k in 0..n {
            let gt = &s.rotations[k];
            let (v, g) = joint_loss(loss, &a.decoded[k], gt, &self.representation.encode(gt));
            angle_value += v;
            if lambda != 0.0 {
                for (i, gi) in g.into_iter().enumerate() {
                    g_raw[k * d + i] += lambda * gi / nf * weight;
                }
            }
        }
        let value = joint_value + lambda * angle_value / nf;
        let Some(grad) = grad else {
            return value;
        };

        let l = self.layout;
        let g_pos: Vec<Vector3<f64>> = a
            .positions
            .iter()
            .zip(&s.positions.positions)
            .map(|(p, t)| (p - t) * (2.0 / nf * weight))
            .collect();
        let mut g_h = DVector::zeros(l.hidden);
        match self.head {
            Head::Naive => {
                let g3 = DVector::from_iterator(3 * n, g_pos.iter().flat_map(|g| [g.x, g.y, g.z]));
                add_outer(&mut grad[l.w3()], &g3, &a.h);
                add_into(&mut grad[l.b3()], &g3);
                g_h += self.view(l.w3(), l.pos_out).tr_mul(&g3);
            }
            Head::Fk => {
                let globals = a.globals.as_ref().expect("FK head keeps global rotations");
                let g_rot = fk_backprop(&self.tree, &self.shape, &a.rotations, globals, &g_pos);
                for (k, gr) in g_rot.iter().enumerate() {
                    for (i, gi) in a.decoded[k].backprop_rotation(gr).into_iter().enumerate() {
                        g_raw[k * d + i] += gi;
                    }
                }
            }
        }
        add_outer(&mut grad[l.w2()], &g_raw, &a.h);
        add_into(&mut grad[l.b2()], &g_raw);
        g_h += self.view(l.w2(), l.rot_out).tr_mul(&g_raw);

        let g_pre = g_h.zip_map(&a.h, |g, h| g * (1.0 - h * h));
        add_outer(&mut grad[l.w1()], &g_pre, &a.x);
        add_into(&mut grad[l.b1()], &g_pre);
        value
    }
}

fn joint_position_loss(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    pred.iter()
        .zip(gt)
        .map(|(p, t)| (p - t).norm_squared())
        .sum::<f64>()
        / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{generate_synthetic, SyntheticSpec};

    fn samples() -> (KinematicTree, Vec<Sample>) {
        let spec = SyntheticSpec {
            num_sequences: 1,
            frames_per_sequence: 6,
            seed: 4,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let s = data[0].frames.iter().map(|f| Sample::from_frame(f).unwrap()).collect();
        (spec.tree().unwrap(), s)
    }

    #[test]
    fn model_codes() {
        let cfg = RegressorConfig {
            representation: Representation::Quaternion,
            loss: LossKind::Geodesic,
            wba: true,
            ..RegressorConfig::default()
        };
        assert_eq!(cfg.model_code(), "N-Q-4");
        let cfg = RegressorConfig {
            head: Head::Fk,
            representation: Representation::AxisAngle,
            loss: LossKind::Mse,
            ..RegressorConfig::default()
        };
        assert_eq!(cfg.model_code(), "S-AA-1");
    }

    #[test]
    fn zero_lambda_decouples_rotation_head() {
        let (tree, batch) = samples();
        for repr in Representation::ALL {
            let model = Regressor::new(&tree, repr, Head::Naive, 16, 1);
            let (_, grad) = model.batch_loss_and_gradient(&batch, LossKind::Geodesic, 0.0).unwrap();
            assert!(grad[model.rotation_head()].iter().all(|&g| g == 0.0));
            assert!(grad.iter().any(|&g| g != 0.0));
        }
    }

    #[test]
    fn fk_head_is_exact_on_true_rotations() {
        let (tree, batch) = samples();
        let model = Regressor::new(&tree, Representation::Matrix, Head::Fk, 8, 0);
        for s in &batch {
            assert_eq!(model.fk_joint_loss(&s.rotations, &s.positions).unwrap(), 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (tree, batch) = samples();
        for head in [Head::Naive, Head::Fk] {
            for repr in Representation::ALL {
                for loss in [LossKind::Mse, LossKind::Geodesic] {
                    let model = Regressor::new(&tree, repr, head, 8, 2);
                    let (_, grad) = model.batch_loss_and_gradient(&batch, loss, 0.7).unwrap();
                    let step = model.parameters().len() / 37;
                    for i in (0..model.parameters().len()).step_by(step.max(1)) {
                        let mut m = model.clone();
                        m.parameters_mut()[i] += 1e-6;
                        let up = m.batch_loss(&batch, loss, 0.7).unwrap();
                        m.parameters_mut()[i] -= 2e-6;
                        let down = m.batch_loss(&batch, loss, 0.7).unwrap();
                        let fd = (up - down) / 2e-6;
                        assert!(
                            (fd - grad[i]).abs() <= 1e-5 * fd.abs().max(grad[i].abs()) + 1e-8,
                            "{head:?} {repr} {loss:?} param {i}: {fd} vs {}",
                            grad[i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn flipped_sample_is_consistent() {
        let (tree, batch) = samples();
        let s = &batch[0];
        let f = s.flipped(&tree);
        assert_eq!(f.flipped(&tree), *s);
        let fk = forward_kinematics(&tree, &BodyShape::uniform(22), &f.rotations).unwrap();
        for (a, b) in fk.positions.positions.iter().zip(&f.positions.positions) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
