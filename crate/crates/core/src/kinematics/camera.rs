use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::fk::{Pose2D, Pose3D};
use crate::error::{Error, Result};

/// Weak-perspective camera: `(x, y) ↦ s·(x, y) + c`, depth dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspective {
    pub scale: f64,
    pub offset: [f64; 2],
}

impl Default for WeakPerspective {
    fn default() -> Self {
        WeakPerspective {
            scale: 1.0,
            offset: [0.0, 0.0],
        }
    }
}

impl WeakPerspective {
    pub fn new(scale: f64, offset: [f64; 2]) -> Self {
        WeakPerspective { scale, offset }
    }

    fn c(&self) -> Vector2<f64> {
        Vector2::new(self.offset[0], self.offset[1])
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(p.x, p.y) * self.scale + self.c()
    }

    pub fn project(&self, pose: &Pose3D) -> Pose2D {
        Pose2D::new(pose.positions.iter().map(|p| self.project_point(p)).collect())
    }

    /// Inverts the projection given the dropped depths.
    pub fn unproject(&self, pose: &Pose2D, depths: &[f64]) -> Result<Pose3D> {
        if depths.len() != pose.len() {
            return Err(Error::mismatch("depths", pose.len(), depths.len()));
        }
        if self.scale == 0.0 {
            return Err(Error::InvalidConfig("camera scale must be non-zero".into()));
        }
        let c = self.c();
        Ok(Pose3D::new(
            pose.positions
                .iter()
                .zip(depths)
                .map(|(q, &z)| {
                    let xy = (q - c) / self.scale;
                    Vector3::new(xy.x, xy.y, z)
                })
                .collect(),
        ))
    }
}
