//! Toolkit for full 3D human poses: joint rotations plus joint locations.
//!
//! - [`so3`]: rotation representations, nearest-rotation projection,
//!   geodesic/MSE losses and their gradients.
//! - [`kinematics`]: kinematic trees, forward kinematics, weak-perspective
//!   projection, horizontal flips and within-batch augmentation.
//! - [`metrics`]: MPJPE and MPJAE with joint subsets.
//! - [`ik`]: Levenberg–Marquardt inverse kinematics and pseudo labels.
//! - [`testbed`]: synthetic motion and a small regressor for comparing
//!   representations and losses.
//! - [`io`]: tree JSON, pose-sequence JSONL and config files.
//! - [`bench`]: per-frame timing of IK versus direct regression.

pub mod bench;
pub mod error;
pub mod ik;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod so3;
pub mod testbed;

pub use error::{Error, Result};
