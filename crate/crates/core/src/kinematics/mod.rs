//! Kinematic trees, forward kinematics, projection and flip augmentation.

mod camera;
mod fk;
mod flip;
mod sequence;
mod tree;

pub use camera::WeakPerspective;
pub use fk::{
    fk_backprop, forward_kinematics, global_rotations, positions_from_globals, FkOutput, Pose,
    Pose2D, Pose3D,
};
pub use flip::{build_wba_batch, mirror_rotation, Flip, WbaPairing};
pub use sequence::{Frame, IkFrameInfo, PoseSequence};
pub use tree::{BodyShape, KinematicTree, TreeFile};
