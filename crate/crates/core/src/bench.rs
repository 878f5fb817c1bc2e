//! Per-frame timing of warm-started IK, cold-started IK and direct
//! regression.
//!
//! Modes are sampled interleaved, one frame at a time, so slow drifts in
//! machine load affect all modes alike. Only the solver or forward pass is
//! timed; the first samples of each mode are discarded as warm-up.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ik::{solve_frame, IkConfig};
use crate::kinematics::{BodyShape, KinematicTree, Pose, Pose2D, Pose3D, PoseSequence};
use crate::testbed::Regressor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchMode {
    #[serde(rename = "ik-warm")]
    IkWarm,
    #[serde(rename = "ik-cold")]
    IkCold,
    #[serde(rename = "regress")]
    Regress,
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [BenchMode::IkWarm, BenchMode::IkCold, BenchMode::Regress];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::IkWarm => "ik-warm",
            BenchMode::IkCold => "ik-cold",
            BenchMode::Regress => "regress",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown bench mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub modes: Vec<BenchMode>,
    /// Timed samples per mode, after warm-up.
    pub min_samples: usize,
    pub warmup: usize,
    pub ik: IkConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            modes: BenchMode::ALL.to_vec(),
            min_samples: 1000,
            warmup: 10,
            ik: IkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mode: BenchMode,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
    /// Mean LM iterations per frame (IK modes only).
    pub mean_iterations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub modes: Vec<ModeStats>,
    pub frames: usize,
}

impl BenchReport {
    pub fn get(&self, mode: BenchMode) -> Option<&ModeStats> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} | {:>12} | {:>10} | {:>10} | {:>7}",
            "mode", "mean [ms]", "std [ms]", "iters", "samples"
        );
        out.push_str(&"-".repeat(59));
        out.push('\n');
        for m in &self.modes {
            let iters = m
                .mean_iterations
                .map_or_else(|| "-".to_string(), |i| format!("{i:.2}"));
            let _ = writeln!(
                out,
                "{:<8} | {:>12.4} | {:>10.4} | {:>10} | {:>7}",
                m.mode.name(),
                m.mean_ms,
                m.std_ms,
                iters,
                m.samples
            );
        }
        out
    }
}

#[derive(Default)]
struct Samples {
    times: Vec<f64>,
    iterations: Vec<usize>,
}

impl Samples {
    fn stats(&self, mode: BenchMode, warmup: usize) -> ModeStats {
        let t = &self.times[warmup.min(self.times.len())..];
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let iters = &self.iterations[warmup.min(self.iterations.len())..];
        ModeStats {
            mode,
            mean_ms: mean,
            std_ms: var.sqrt(),
            samples: t.len(),
            mean_iterations: (!iters.is_empty())
                .then(|| iters.iter().sum::<usize>() as f64 / iters.len() as f64),
        }
    }
}

/// Times every configured mode on the frames of `sequence`, cycling through
/// the frames until each mode has `min_samples` samples after warm-up.
///
/// The warm chain restarts from the rest pose whenever the cycle returns to
/// the first frame, as a fresh sequence would.
pub fn run_bench(
    tree: &KinematicTree,
    shape: &BodyShape,
    sequence: &PoseSequence,
    regressor: &Regressor,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if cfg.modes.is_empty() {
        return Err(Error::InvalidConfig("no bench modes selected".into()));
    }
    if cfg.min_samples == 0 {
        return Err(Error::InvalidConfig("min_samples must be positive".into()));
    }
    let frames: Vec<(&Pose2D, &Pose3D)> = sequence
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.pose3d
                .as_ref()
                .map(|p| (&f.pose2d, p))
                .ok_or_else(|| Error::InvalidSequence(format!("frame {i} has no pose3d")))
        })
        .collect::<Result<_>>()?;
    if frames.is_empty() {
        return Err(Error::InvalidSequence("bench needs at least one frame".into()));
    }

    let total = cfg.min_samples + cfg.warmup;
    let rest = Pose::rest(tree.len());
    let mut warm = rest.clone();
    let mut samples: Vec<Samples> = cfg.modes.iter().map(|_| Samples::default()).collect();
    for step in 0..total {
        let t = step % frames.len();
        let (pose2d, targets) = frames[t];
        if t == 0 {
            warm = rest.clone();
        }
        for (mode, s) in cfg.modes.iter().zip(samples.iter_mut()) {
            match mode {
                BenchMode::IkWarm | BenchMode::IkCold => {
                    let init = if *mode == BenchMode::IkWarm { &warm } else { &rest };
                    let start = Instant::now();
                    let res = solve_frame(tree, shape, targets, init, &cfg.ik)?;
                    s.times.push(start.elapsed().as_secs_f64() * 1000.0);
                    s.iterations.push(res.iterations_used);
                    if *mode == BenchMode::IkWarm {
                        warm = res.pose;
                    }
                }
                BenchMode::Regress => {
                    let start = Instant::now();
                    let out = regressor.predict(pose2d)?;
                    s.times.push(start.elapsed().as_secs_f64() * 1000.0);
                    std::hint::black_box(out);
                }
            }
        }
    }
    Ok(BenchReport {
        modes: cfg
            .modes
            .iter()
            .zip(&samples)
            .map(|(m, s)| s.stats(*m, cfg.warmup))
            .collect(),
        frames: frames.len(),
    })
}
