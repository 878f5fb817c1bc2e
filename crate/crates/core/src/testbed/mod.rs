//! Synthetic-data testbed comparing rotation representations, rotation
//! losses and within-batch flip augmentation on a small regressor.

mod regressor;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use regressor::{Head, Regressor, RegressorConfig, Sample};
pub use synth::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::kinematics::{build_wba_batch, KinematicTree, PoseSequence};
use crate::metrics::{format_table, MetricAccumulator, MetricReport, RotationFrame, TableRow};
use crate::so3::{LossKind, Representation};

/// Tolerance on the relative gradient error of the pre-flight check.
pub const PREFLIGHT_TOL: f64 = 1e-4;
const PREFLIGHT_PARAMS: usize = 48;
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model_code: String,
    pub config: RegressorConfig,
    pub train: MetricReport,
    pub validation: MetricReport,
    /// Full training-set loss before the first update.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean mini-batch loss per epoch.
    pub loss_curve: Vec<f64>,
    pub diverged: bool,
    pub preflight_max_rel_error: f64,
    pub preflight_passed: bool,
}

impl TrainReport {
    pub fn table_row(&self) -> TableRow {
        let metric = |v: Option<f64>| if self.diverged { Some(f64::NAN) } else { v };
        TableRow {
            model: self.model_code.clone(),
            loss: self.config.loss.label().to_string(),
            wba: self.config.wba,
            mpjpe_mm: metric(self.validation.mpjpe_mm),
            mpjae_deg: metric(self.validation.mpjae_deg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<TrainReport>,
}

impl GridReport {
    pub fn table(&self) -> String {
        let rows: Vec<TableRow> = self.cells.iter().map(TrainReport::table_row).collect();
        format_table(&rows)
    }
}

/// The 12 cells (3 representations × 2 losses × WBA off/on) around `base`,
/// ordered by representation, then WBA, then loss.
pub fn standard_grid(base: &RegressorConfig) -> Vec<RegressorConfig> {
    let mut out = Vec::with_capacity(12);
    for representation in Representation::ALL {
        for wba in [false, true] {
            for loss in [LossKind::Mse, LossKind::Geodesic] {
                out.push(RegressorConfig {
                    representation,
                    loss,
                    wba,
                    ..base.clone()
                });
            }
        }
    }
    out
}

fn collect_samples(data: &[PoseSequence]) -> Result<Vec<Sample>> {
    data.iter()
        .flat_map(|s| &s.frames)
        .map(Sample::from_frame)
        .collect()
}

fn prepare_batch(
    tree: &KinematicTree,
    cfg: &RegressorConfig,
    samples: &[Sample],
    order: &[usize],
) -> Result<Vec<Sample>> {
    let mut batch: Vec<Sample> = order.iter().map(|&i| samples[i].clone()).collect();
    if cfg.wba {
        batch.truncate(batch.len() / 2 * 2);
        batch = build_wba_batch(tree, &batch, cfg.wba_pairing)?;
    }
    Ok(batch)
}

/// Largest relative error between the analytic gradient and central
/// differences over a deterministic sample of parameters, measured as
/// `‖a − f‖ / max(‖a‖, ‖f‖)` over the sampled entries.
pub fn gradient_check(
    model: &Regressor,
    batch: &[Sample],
    loss: LossKind,
    lambda: f64,
    seed: u64,
) -> Result<f64> {
    let (_, grad) = model.batch_loss_and_gradient(batch, loss, lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut indices: Vec<usize> = (0..grad.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(PREFLIGHT_PARAMS);
    let h = 1e-6;
    let mut probe = model.clone();
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    for &i in &indices {
        let orig = probe.parameters()[i];
        probe.parameters_mut()[i] = orig + h;
        let up = probe.batch_loss(batch, loss, lambda)?;
        probe.parameters_mut()[i] = orig - h;
        let down = probe.batch_loss(batch, loss, lambda)?;
        probe.parameters_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        diff += (fd - grad[i]).powi(2);
        na += grad[i] * grad[i];
        nf += fd * fd;
    }
    let scale = na.sqrt().max(nf.sqrt());
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}

fn full_loss(model: &Regressor, samples: &[Sample], cfg: &RegressorConfig) -> Result<f64> {
    model.batch_loss(samples, cfg.loss, cfg.loss_weight_lambda)
}

fn evaluate(model: &Regressor, samples: &[Sample]) -> Result<MetricReport> {
    let n = model.tree().len();
    let mut acc = MetricAccumulator::new((0..n).collect(), RotationFrame::ParentRelative)?;
    for s in samples {
        let (rotations, positions) = model.predict(&s.pose2d)?;
        acc.add_positions(&positions, &s.positions)?;
        acc.add_rotations(model.tree(), &rotations, &s.rotations)?;
        acc.end_frame();
    }
    Ok(acc.finish())
}

fn empty_report(joints: usize) -> MetricReport {
    MetricReport {
        mpjpe_mm: None,
        mpjae_deg: None,
        per_joint_mpjpe: Vec::new(),
        per_joint_mpjae: Vec::new(),
        joint_subset: (0..joints).collect(),
        frames: 0,
    }
}

/// Trains one regressor with plain mini-batch gradient descent and
/// evaluates it on the training and validation sets.
///
/// A gradient check on the first batch runs before training. Training stops
/// early and is reported as diverged when a loss becomes non-finite or an
/// epoch's mean loss exceeds ten times the initial loss.
pub fn train_regressor(
    tree: &KinematicTree,
    train: &[PoseSequence],
    validation: &[PoseSequence],
    cfg: &RegressorConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let samples = collect_samples(train)?;
    let val_samples = collect_samples(validation)?;
    let min_batch = if cfg.wba { 2 } else { 1 };
    if samples.len() < min_batch {
        return Err(Error::InvalidSequence("training set has too few frames".into()));
    }

    let mut model = Regressor::new(
        tree,
        cfg.representation,
        cfg.head,
        cfg.hidden_width,
        cfg.seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let first: Vec<usize> = (0..samples.len().min(cfg.batch_size)).collect();
    let preflight_batch = prepare_batch(tree, cfg, &samples, &first)?;
    let preflight_max_rel_error = gradient_check(
        &model,
        &preflight_batch,
        cfg.loss,
        cfg.loss_weight_lambda,
        cfg.seed,
    )?;

    let initial_loss = full_loss(&model, &samples, cfg)?;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut diverged = !initial_loss.is_finite();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    'epochs: for _ in 0..cfg.epochs {
        if diverged {
            break;
        }
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            let batch = prepare_batch(tree, cfg, &samples, chunk)?;
            let (value, grad) =
                model.batch_loss_and_gradient(&batch, cfg.loss, cfg.loss_weight_lambda)?;
            if !value.is_finite() {
                diverged = true;
                break 'epochs;
            }
            for (t, g) in model.parameters_mut().iter_mut().zip(&grad) {
                *t -= cfg.learning_rate * g;
            }
            if !model.parameters().iter().all(|t| t.is_finite()) {
                diverged = true;
                break 'epochs;
            }
            sum += value;
            batches += 1;
        }
        let epoch_loss = sum / batches.max(1) as f64;
        loss_curve.push(epoch_loss);
        if epoch_loss > DIVERGENCE_FACTOR * initial_loss {
            diverged = true;
        }
    }

    let n = tree.len();
    let (final_loss, train_report, validation_report) = if diverged {
        (f64::NAN, empty_report(n), empty_report(n))
    } else {
        let val = if val_samples.is_empty() {
            empty_report(n)
        } else {
            evaluate(&model, &val_samples)?
        };
        (full_loss(&model, &samples, cfg)?, evaluate(&model, &samples)?, val)
    };

    Ok(TrainReport {
        model_code: cfg.model_code(),
        config: cfg.clone(),
        train: train_report,
        validation: validation_report,
        initial_loss,
        final_loss,
        loss_curve,
        diverged,
        preflight_max_rel_error,
        preflight_passed: preflight_max_rel_error < PREFLIGHT_TOL,
    })
}

/// Trains every configuration, in parallel across cells; the report keeps
/// the order of `configs`.
pub fn run_grid(
    tree: &KinematicTree,
    train: &[PoseSequence],
    validation: &[PoseSequence],
    configs: &[RegressorConfig],
) -> Result<GridReport> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("grid has no cells".into()));
    }
    let cells = configs
        .par_iter()
        .map(|cfg| train_regressor(tree, train, validation, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_has_twelve_distinct_cells() {
        let grid = standard_grid(&RegressorConfig::default());
        assert_eq!(grid.len(), 12);
        let mut codes: Vec<String> = grid.iter().map(RegressorConfig::model_code).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 12);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let tree = KinematicTree::body22();
        assert!(run_grid(&tree, &[], &[], &[]).is_err());
    }
}
