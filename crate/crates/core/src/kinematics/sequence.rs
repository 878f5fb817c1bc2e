use super::fk::{Pose2D, Pose3D};
use crate::error::{Error, Result};
use crate::so3::JointRotations;

/// Convergence details attached to IK-generated labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkFrameInfo {
    pub converged: bool,
    pub residual_mm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub pose2d: Pose2D,
    pub pose3d: Option<Pose3D>,
    pub rotations: Option<JointRotations>,
    /// Where the rotations came from, e.g. `"ik-pseudo"`.
    pub provenance: Option<String>,
    pub ik: Option<IkFrameInfo>,
}

impl Frame {
    pub fn new(timestamp: f64, pose2d: Pose2D) -> Self {
        Frame {
            timestamp,
            pose2d,
            pose3d: None,
            rotations: None,
            provenance: None,
            ik: None,
        }
    }

    pub fn with_pose3d(mut self, pose3d: Pose3D) -> Self {
        self.pose3d = Some(pose3d);
        self
    }

    pub fn with_rotations(mut self, rotations: JointRotations) -> Self {
        self.rotations = Some(rotations);
        self
    }
}

/// Ordered frames of one subject sharing one kinematic tree.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseSequence {
    pub frames: Vec<Frame>,
    pub frame_rate: f64,
}

impl PoseSequence {
    pub fn new(frames: Vec<Frame>, frame_rate: f64) -> Result<Self> {
        let seq = PoseSequence { frames, frame_rate };
        seq.validate(None)?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks strictly increasing timestamps and, when `joints` is given,
    /// that every per-joint payload has that length.
    pub fn validate(&self, joints: Option<usize>) -> Result<()> {
        for (i, w) in self.frames.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::InvalidSequence(format!(
                    "timestamps must be strictly increasing (frame {} at {} after {})",
                    i + 1,
                    w[1].timestamp,
                    w[0].timestamp
                )));
            }
        }
        let joints = match joints {
            Some(j) => j,
            None => match self.frames.first() {
                Some(f) => f.pose2d.len(),
                None => return Ok(()),
            },
        };
        for (i, f) in self.frames.iter().enumerate() {
            let lens = [
                Some(f.pose2d.len()),
                f.pose3d.as_ref().map(Pose3D::len),
                f.rotations.as_ref().map(JointRotations::len),
            ];
            if let Some(bad) = lens.into_iter().flatten().find(|&l| l != joints) {
                return Err(Error::InvalidSequence(format!(
                    "frame {i} has {bad} joints, expected {joints}"
                )));
            }
        }
        Ok(())
    }
}
