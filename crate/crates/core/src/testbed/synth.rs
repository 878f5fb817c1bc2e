use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, BodyShape, Frame, KinematicTree, Pose2D, PoseSequence, WeakPerspective,
};
use crate::so3::{random_rotation_within, JointRotations, Quaternion};

/// Recipe for a reproducible synthetic motion dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Tree preset name (`body22` or `body26`).
    pub preset: String,
    pub num_sequences: usize,
    pub frames_per_sequence: usize,
    /// Keyframes per sequence; one keyframe gives a static pose.
    pub keyframe_count: usize,
    /// Standard deviation of the Gaussian noise added to 2D keypoints.
    pub noise_std_2d: f64,
    pub camera: WeakPerspective,
    pub frame_rate: f64,
    /// Largest rotation angle of any keyframe joint rotation, in radians.
    pub max_angle: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            preset: "body22".into(),
            num_sequences: 8,
            frames_per_sequence: 60,
            keyframe_count: 4,
            noise_std_2d: 0.0,
            camera: WeakPerspective::default(),
            frame_rate: 30.0,
            max_angle: 2.0 * std::f64::consts::FRAC_PI_3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn tree(&self) -> Result<KinematicTree> {
        KinematicTree::preset(&self.preset).ok_or_else(|| Error::PresetIncompatible {
            preset: self.preset.clone(),
            reason: "unknown tree preset".into(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.tree()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.frames_per_sequence == 0 {
            return bad("frames_per_sequence must be positive");
        }
        if self.keyframe_count == 0 {
            return bad("keyframe_count must be positive");
        }
        if !(self.noise_std_2d >= 0.0) {
            return bad("noise_std_2d must be non-negative");
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive");
        }
        if !(self.max_angle > 0.0) {
            return bad("max_angle must be positive");
        }
        Ok(())
    }
}

/// Keyframe index and interpolation weight for frame `t`.
fn keyframe_position(t: usize, frames: usize, keyframes: usize) -> (usize, f64) {
    if keyframes == 1 || frames == 1 {
        return (0, 0.0);
    }
    let u = t as f64 * (keyframes - 1) as f64 / (frames - 1) as f64;
    let i = (u.floor() as usize).min(keyframes - 2);
    (i, u - i as f64)
}

fn generate_sequence(
    spec: &SyntheticSpec,
    tree: &KinematicTree,
    shape: &BodyShape,
    index: usize,
) -> Result<PoseSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = tree.len();
    let keys: Vec<Vec<Quaternion>> = (0..spec.keyframe_count)
        .map(|_| {
            (0..n)
                .map(|_| random_rotation_within(&mut rng, spec.max_angle))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_std_2d)
        .map_err(|e| Error::InvalidConfig(format!("noise_std_2d: {e}")))?;

    let mut frames = Vec::with_capacity(spec.frames_per_sequence);
    for t in 0..spec.frames_per_sequence {
        let (i, alpha) = keyframe_position(t, spec.frames_per_sequence, spec.keyframe_count);
        let rotations: JointRotations = (0..n)
            .map(|k| {
                let q = if spec.keyframe_count == 1 {
                    keys[0][k]
                } else {
                    keys[i][k].slerp(&keys[i + 1][k], alpha)
                };
                q.to_rotation()
            })
            .collect();
        let positions = forward_kinematics(tree, shape, &rotations)?.positions;
        let mut pose2d = spec.camera.project(&positions);
        if spec.noise_std_2d > 0.0 {
            for p in &mut pose2d.positions {
                *p += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }
        frames.push(
            Frame::new(t as f64 / spec.frame_rate, Pose2D::new(pose2d.positions))
                .with_pose3d(positions)
                .with_rotations(rotations),
        );
    }
    PoseSequence::new(frames, spec.frame_rate)
}

/// Generates `spec.num_sequences` sequences. Each sequence draws from its own
/// random stream, so the output does not depend on thread scheduling.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<PoseSequence>> {
    spec.validate()?;
    let tree = spec.tree()?;
    let shape = BodyShape::uniform(tree.len());
    (0..spec.num_sequences)
        .into_par_iter()
        .map(|i| generate_sequence(spec, &tree, &shape, i))
        .collect()
}
