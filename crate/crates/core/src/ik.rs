//! Inverse kinematics by Levenberg–Marquardt.
//!
//! Each joint rotation is updated by a right-multiplied increment,
//! `R_k ← R_k·exp([δ_k]×)`, so the optimization never touches a global
//! parameterization of SO(3). With `optimize_scales` each non-root bone also
//! gets a log-scale parameter `ε_k`, `s_k ← s_k·exp(ε_k)`.
//!
//! The objective is `‖FK(θ) − targets‖² + w·Σ_k φ_k²`, with positions
//! measured in millimeters and `φ_k` the angle (radians) of the
//! parent-relative rotation of non-root joint `k` away from the rest pose.
//! The root carries the global orientation and is not penalized. At the
//! default weight the prior only settles directions that positions leave
//! undetermined, such as twist about a bone.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, BodyShape, Frame, IkFrameInfo, KinematicTree, Pose, Pose3D, PoseSequence,
};
use crate::so3::{AxisAngle, JointRotations, RotMatrix};

pub const PSEUDO_LABEL_PROVENANCE: &str = "ik-pseudo";

const MAX_DAMPING: f64 = 1e12;
const MIN_DAMPING: f64 = 1e-12;
const MM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkConfig {
    pub max_iterations: usize,
    /// Converged once every joint is within this distance (meters).
    pub position_tolerance: f64,
    /// Initial LM damping.
    pub damping_lambda: f64,
    pub prior_weight: f64,
    pub warm_start: bool,
    pub optimize_scales: bool,
}

impl Default for IkConfig {
    fn default() -> Self {
        IkConfig {
            max_iterations: 200,
            position_tolerance: 1e-4,
            damping_lambda: 1e-3,
            prior_weight: 1e-3,
            warm_start: true,
            optimize_scales: false,
        }
    }
}

impl IkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.position_tolerance > 0.0) {
            return Err(Error::InvalidConfig("position_tolerance must be positive".into()));
        }
        if !(self.damping_lambda >= 0.0) || !(self.prior_weight >= 0.0) {
            return Err(Error::InvalidConfig(
                "damping_lambda and prior_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkResult {
    pub pose: Pose,
    /// Bone scales used for the final pose (refined when `optimize_scales`).
    pub shape: BodyShape,
    /// Mean per-joint distance to the targets, in millimeters.
    pub final_residual_mm: f64,
    pub max_residual_mm: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub wall_time_ms: f64,
    /// All targets coincide, so no pose can be recovered.
    pub degenerate_target: bool,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

impl IkResult {
    pub fn frame_info(&self) -> IkFrameInfo {
        IkFrameInfo {
            converged: self.converged,
            residual_mm: self.final_residual_mm,
            iterations: self.iterations_used,
        }
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the right Jacobian of SO(3) at `phi`.
fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let a = phi.norm();
    let k = skew(phi);
    let c = if a < 1e-4 {
        1.0 / 12.0 + a * a / 720.0
    } else {
        1.0 / (a * a) - (1.0 + a.cos()) / (2.0 * a * a.sin())
    };
    Matrix3::identity() + 0.5 * k + c * k * k
}

fn log_map(r: &RotMatrix) -> Vector3<f64> {
    AxisAngle::from_rotation(r).0
}

fn exp_map(v: &Vector3<f64>) -> RotMatrix {
    AxisAngle::new(*v).to_rotation()
}

/// Number of parameters: three per joint, plus one log-scale per non-root
/// bone when scales are optimized.
pub fn parameter_count(joints: usize, optimize_scales: bool) -> usize {
    3 * joints + if optimize_scales { joints - 1 } else { 0 }
}

/// Analytic Jacobian of the FK joint positions (rows `3d..3d+3`) with
/// respect to the right-perturbation increments (columns `3k..3k+3`) and,
/// when `optimize_scales`, the log bone scales (column `3n + k − 1`).
pub fn position_jacobian(
    tree: &KinematicTree,
    shape: &BodyShape,
    rotations: &JointRotations,
    optimize_scales: bool,
) -> Result<DMatrix<f64>> {
    let fk = forward_kinematics(tree, shape, rotations)?;
    Ok(jacobian_from_fk(
        tree,
        shape,
        &fk.positions.positions,
        &fk.global_rotations,
        optimize_scales,
    ))
}

fn jacobian_from_fk(
    tree: &KinematicTree,
    shape: &BodyShape,
    positions: &[Vector3<f64>],
    globals: &JointRotations,
    optimize_scales: bool,
) -> DMatrix<f64> {
    let n = tree.len();
    let mut jac = DMatrix::zeros(3 * n, parameter_count(n, optimize_scales));
    for k in 0..n {
        let g = globals[k].matrix();
        for d in (k + 1)..n {
            if !tree.is_in_subtree(d, k) {
                continue;
            }
            let block = -skew(&(positions[d] - positions[k])) * g;
            jac.fixed_view_mut::<3, 3>(3 * d, 3 * k).copy_from(&block);
        }
        if optimize_scales {
            if let Some(p) = tree.parent(k) {
                let col = globals[p].rotate(&shape.offset(tree, k));
                for d in k..n {
                    if tree.is_in_subtree(d, k) {
                        jac.fixed_view_mut::<3, 1>(3 * d, 3 * n + k - 1).copy_from(&col);
                    }
                }
            }
        }
    }
    jac
}

struct State {
    rotations: JointRotations,
    shape: BodyShape,
    positions: Vec<Vector3<f64>>,
    globals: JointRotations,
    objective: f64,
}

struct Problem<'a> {
    tree: &'a KinematicTree,
    targets: Vec<Vector3<f64>>,
    cfg: &'a IkConfig,
}

impl Problem<'_> {
    fn evaluate(&self, rotations: JointRotations, shape: BodyShape) -> Result<State> {
        let fk = forward_kinematics(self.tree, &shape, &rotations)?;
        let positions = fk.positions.positions;
        let data: f64 = positions
            .iter()
            .zip(&self.targets)
            .map(|(p, t)| (p - t).norm_squared())
            .sum::<f64>()
            * (MM * MM);
        let prior: f64 = if self.cfg.prior_weight > 0.0 {
            rotations.iter().skip(1).map(|r| log_map(r).norm_squared()).sum()
        } else {
            0.0
        };
        Ok(State {
            rotations,
            shape,
            positions,
            globals: fk.global_rotations,
            objective: data + self.cfg.prior_weight * prior,
        })
    }

    fn max_error(&self, s: &State) -> f64 {
        s.positions
            .iter()
            .zip(&self.targets)
            .map(|(p, t)| (p - t).norm())
            .fold(0.0, f64::max)
    }

    fn mean_error(&self, s: &State) -> f64 {
        s.positions
            .iter()
            .zip(&self.targets)
            .map(|(p, t)| (p - t).norm())
            .sum::<f64>()
            / s.positions.len() as f64
    }

    fn residual_rows(&self) -> usize {
        let n = self.tree.len();
        3 * n + if self.cfg.prior_weight > 0.0 { 3 * (n - 1) } else { 0 }
    }

    fn residuals(&self, s: &State) -> DVector<f64> {
        let n = self.tree.len();
        let mut r = DVector::zeros(self.residual_rows());
        for d in 0..n {
            r.fixed_rows_mut::<3>(3 * d)
                .copy_from(&((s.positions[d] - self.targets[d]) * MM));
        }
        if self.cfg.prior_weight > 0.0 {
            let sw = self.cfg.prior_weight.sqrt();
            for k in 1..n {
                r.fixed_rows_mut::<3>(3 * n + 3 * (k - 1))
                    .copy_from(&(sw * log_map(&s.rotations[k])));
            }
        }
        r
    }

    /// Stacked residual vector and its Jacobian at `s`.
    fn linearize(&self, s: &State) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.tree.len();
        let scales = self.cfg.optimize_scales;
        let jp = jacobian_from_fk(self.tree, &s.shape, &s.positions, &s.globals, scales);
        let mut jac = DMatrix::zeros(self.residual_rows(), jp.ncols());
        jac.rows_mut(0, 3 * n).copy_from(&(jp * MM));
        let r = self.residuals(s);
        if self.cfg.prior_weight > 0.0 {
            let sw = self.cfg.prior_weight.sqrt();
            for k in 1..n {
                let row = 3 * n + 3 * (k - 1);
                let phi = r.fixed_rows::<3>(row) / sw;
                jac.fixed_view_mut::<3, 3>(row, 3 * k)
                    .copy_from(&(sw * right_jacobian_inv(&phi)));
            }
        }
        (r, jac)
    }

    fn step(&self, s: &State, delta: &DVector<f64>) -> Result<State> {
        let n = self.tree.len();
        let rotations: JointRotations = (0..n)
            .map(|k| {
                let d = Vector3::new(delta[3 * k], delta[3 * k + 1], delta[3 * k + 2]);
                s.rotations[k] * exp_map(&d)
            })
            .collect();
        let shape = if self.cfg.optimize_scales {
            let mut scales = s.shape.bone_scales.clone();
            for (k, scale) in scales.iter_mut().enumerate().skip(1) {
                *scale *= delta[3 * n + k - 1].exp();
            }
            BodyShape::new(scales)?
        } else {
            s.shape.clone()
        };
        self.evaluate(rotations, shape)
    }
}

/// Normal equations `JᵀJ` and `Jᵀr` at one iterate.
struct Linearization {
    jtj: DMatrix<f64>,
    jtr: DVector<f64>,
}

fn linearize(problem: &Problem<'_>, s: &State) -> Linearization {
    let (r, jac) = problem.linearize(s);
    let jt = jac.transpose();
    Linearization {
        jtj: &jt * &jac,
        jtr: jt * r,
    }
}

/// Solves for the pose whose FK best matches `targets`, starting at `init`.
/// Targets are re-rooted at joint 0 first.
pub fn solve_frame(
    tree: &KinematicTree,
    shape: &BodyShape,
    targets: &Pose3D,
    init: &Pose,
    cfg: &IkConfig,
) -> Result<IkResult> {
    cfg.validate()?;
    shape.check(tree)?;
    if targets.len() != tree.len() {
        return Err(Error::mismatch("target joints", tree.len(), targets.len()));
    }
    if init.len() != tree.len() {
        return Err(Error::mismatch("initial pose rotations", tree.len(), init.len()));
    }
    let start = Instant::now();
    let problem = Problem {
        tree,
        targets: targets.rerooted(0).positions,
        cfg,
    };
    let degenerate_target = problem.targets.iter().all(|t| t.norm() < 1e-12);

    let mut state = problem.evaluate(init.rotations.clone(), shape.clone())?;
    let mut trace = vec![state.objective];
    let mut lambda = cfg.damping_lambda;
    let mut iterations = 0;
    let positions_done = |s: &State| problem.max_error(s) <= cfg.position_tolerance;
    // Without a prior any pose within tolerance is a minimizer; with one the
    // solver keeps going until the objective stops decreasing.
    let has_prior = cfg.prior_weight > 0.0;

    if !degenerate_target && !(positions_done(&state) && !has_prior) {
        let mut lin = linearize(&problem, &state);
        while iterations < cfg.max_iterations {
            if lin.jtr.amax() <= 1e-14 {
                break;
            }
            iterations += 1;
            let mut a = lin.jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda;
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                if lambda > MAX_DAMPING {
                    break;
                }
                continue;
            };
            let step = -chol.solve(&lin.jtr);
            let candidate = problem.step(&state, &step)?;
            if candidate.objective < state.objective {
                let decrease = state.objective - candidate.objective;
                state = candidate;
                trace.push(state.objective);
                lambda = (lambda / 10.0).max(MIN_DAMPING);
                if positions_done(&state) && !has_prior {
                    break;
                }
                if decrease <= 1e-12 * state.objective {
                    break;
                }
                lin = linearize(&problem, &state);
            } else {
                lambda = (lambda * 10.0).max(MIN_DAMPING);
                if lambda > MAX_DAMPING || step.norm() < 1e-14 {
                    break;
                }
            }
        }
    }
    let converged = !degenerate_target && positions_done(&state);

    Ok(IkResult {
        final_residual_mm: problem.mean_error(&state) * MM,
        max_residual_mm: problem.max_error(&state) * MM,
        pose: Pose::new(state.rotations),
        shape: state.shape,
        iterations_used: iterations,
        converged,
        wall_time_ms: start.elapsed().as_secs_f64() * 1000.0,
        degenerate_target,
        objective_trace: trace,
    })
}

/// Solves every frame in order. The first frame starts at the rest pose;
/// later frames start from the previous solution when `cfg.warm_start`.
pub fn solve_sequence(
    tree: &KinematicTree,
    shape: &BodyShape,
    targets: &[Pose3D],
    cfg: &IkConfig,
) -> Result<Vec<IkResult>> {
    let rest = Pose::rest(tree.len());
    let mut results: Vec<IkResult> = Vec::with_capacity(targets.len());
    for t in targets {
        let (init, init_shape) = match results.last() {
            Some(prev) if cfg.warm_start => (&prev.pose, &prev.shape),
            _ => (&rest, shape),
        };
        let res = solve_frame(tree, init_shape, t, init, cfg)?;
        results.push(res);
    }
    Ok(results)
}

/// Runs IK on the 3D targets of every sequence, in parallel across
/// sequences, and returns copies whose frames carry the recovered rotations,
/// provenance [`PSEUDO_LABEL_PROVENANCE`] and convergence details.
pub fn generate_pseudo_labels(
    tree: &KinematicTree,
    shape: &BodyShape,
    sequences: &[PoseSequence],
    cfg: &IkConfig,
) -> Result<Vec<PoseSequence>> {
    sequences
        .par_iter()
        .enumerate()
        .map(|(s, seq)| {
            let targets = seq
                .frames
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    f.pose3d.clone().ok_or_else(|| {
                        Error::InvalidSequence(format!("sequence {s} frame {i} has no pose3d"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let results = solve_sequence(tree, shape, &targets, cfg)?;
            let frames = seq
                .frames
                .iter()
                .zip(results)
                .map(|(f, res)| Frame {
                    rotations: Some(res.pose.rotations.clone()),
                    provenance: Some(PSEUDO_LABEL_PROVENANCE.to_string()),
                    ik: Some(res.frame_info()),
                    ..f.clone()
                })
                .collect();
            Ok(PoseSequence {
                frames,
                frame_rate: seq.frame_rate,
            })
        })
        .collect()
}
