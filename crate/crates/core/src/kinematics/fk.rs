use nalgebra::{Vector2, Vector3};

use super::tree::{BodyShape, KinematicTree};
use crate::error::{Error, Result};
use crate::so3::{JointRotations, RotMatrix};

/// Parent-relative joint rotations; the root entry is the global rotation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pose {
    pub rotations: JointRotations,
}

impl Pose {
    pub fn new(rotations: JointRotations) -> Self {
        Pose { rotations }
    }

    /// Template pose (all identities).
    pub fn rest(joints: usize) -> Self {
        Pose::new(JointRotations::identity(joints))
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }
}

/// Root-relative 3D joint positions in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pose3D {
    pub positions: Vec<Vector3<f64>>,
}

impl Pose3D {
    pub fn new(positions: Vec<Vector3<f64>>) -> Self {
        Pose3D { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Copy translated so joint `root` sits at the origin.
    pub fn rerooted(&self, root: usize) -> Pose3D {
        let origin = self.positions[root];
        Pose3D::new(self.positions.iter().map(|p| p - origin).collect())
    }
}

/// 2D joint positions in normalized image units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pose2D {
    pub positions: Vec<Vector2<f64>>,
}

impl Pose2D {
    pub fn new(positions: Vec<Vector2<f64>>) -> Self {
        Pose2D { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkOutput {
    pub positions: Pose3D,
    /// World rotation of every joint frame.
    pub global_rotations: JointRotations,
}

/// Forward kinematics:
/// `G_root = R_root`, `G_k = G_parent(k)·R_k`,
/// `p_k = p_parent(k) + G_parent(k)·(scale_k·offset_k)`, with `p_root = 0`.
pub fn forward_kinematics(
    tree: &KinematicTree,
    shape: &BodyShape,
    rotations: &JointRotations,
) -> Result<FkOutput> {
    shape.check(tree)?;
    if rotations.len() != tree.len() {
        return Err(Error::mismatch("pose rotations", tree.len(), rotations.len()));
    }
    let n = tree.len();
    let mut globals: Vec<RotMatrix> = Vec::with_capacity(n);
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        match tree.parent(k) {
            None => {
                globals.push(rotations[k]);
                positions.push(Vector3::zeros());
            }
            Some(p) => {
                let g_parent = globals[p];
                positions.push(positions[p] + g_parent.rotate(&shape.offset(tree, k)));
                globals.push(g_parent * rotations[k]);
            }
        }
    }
    Ok(FkOutput {
        positions: Pose3D::new(positions),
        global_rotations: JointRotations::new(globals),
    })
}

/// World rotations only; does not depend on bone lengths.
pub fn global_rotations(tree: &KinematicTree, rotations: &JointRotations) -> Result<JointRotations> {
    if rotations.len() != tree.len() {
        return Err(Error::mismatch("pose rotations", tree.len(), rotations.len()));
    }
    let mut globals: Vec<RotMatrix> = Vec::with_capacity(tree.len());
    for k in 0..tree.len() {
        let g = match tree.parent(k) {
            None => rotations[k],
            Some(p) => globals[p] * rotations[k],
        };
        globals.push(g);
    }
    Ok(JointRotations::new(globals))
}

/// Joint positions rebuilt from world rotations alone.
pub fn positions_from_globals(
    tree: &KinematicTree,
    shape: &BodyShape,
    globals: &JointRotations,
) -> Result<Pose3D> {
    shape.check(tree)?;
    if globals.len() != tree.len() {
        return Err(Error::mismatch("global rotations", tree.len(), globals.len()));
    }
    let mut positions = vec![Vector3::zeros(); tree.len()];
    for k in 1..tree.len() {
        let p = tree.parent(k).expect("non-root joint has a parent");
        positions[k] = positions[p] + globals[p].rotate(&shape.offset(tree, k));
    }
    Ok(Pose3D::new(positions))
}

/// Gradient of a scalar loss with respect to each parent-relative rotation
/// matrix, given the gradient with respect to FK joint positions.
///
/// Entries are gradients on the unconstrained 3×3 entries, suitable for
/// [`crate::so3::DecodedRotation::backprop_rotation`].
pub fn fk_backprop(
    tree: &KinematicTree,
    shape: &BodyShape,
    rotations: &JointRotations,
    globals: &JointRotations,
    position_grads: &[Vector3<f64>],
) -> Vec<nalgebra::Matrix3<f64>> {
    let n = tree.len();
    // Sum of position gradients over each subtree.
    let mut subtree = position_grads.to_vec();
    for k in (1..n).rev() {
        let p = tree.parent(k).expect("non-root joint has a parent");
        let s = subtree[k];
        subtree[p] += s;
    }
    let mut grad_global = vec![nalgebra::Matrix3::zeros(); n];
    let mut grad_local = vec![nalgebra::Matrix3::zeros(); n];
    for k in (0..n).rev() {
        // G_k places every child c: p_c = p_k + G_k·(s_c·o_c).
        for &c in tree.children(k) {
            grad_global[k] += subtree[c] * shape.offset(tree, c).transpose();
        }
        match tree.parent(k) {
            None => grad_local[k] = grad_global[k],
            Some(p) => {
                // G_k = G_p·R_k
                grad_local[k] = globals[p].matrix().transpose() * grad_global[k];
                let contrib = grad_global[k] * rotations[k].matrix().transpose();
                grad_global[p] += contrib;
            }
        }
    }
    grad_local
}
