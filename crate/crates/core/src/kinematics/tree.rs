use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BODY22_JSON: &str = include_str!("../../data/body22.json");
const BODY26_JSON: &str = include_str!("../../data/body26.json");

/// Joint hierarchy with template bone offsets.
///
/// Joints are topologically ordered: joint 0 is the root and every other
/// joint's parent has a smaller index.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    template_offsets: Vec<Vector3<f64>>,
    left_right_map: Vec<usize>,
    children: Vec<Vec<usize>>,
}

/// On-disk form of a tree. The root's parent is `-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    pub joint_names: Vec<String>,
    pub parents: Vec<i64>,
    pub template_offsets: Vec<[f64; 3]>,
    pub left_right_map: Vec<usize>,
}

impl KinematicTree {
    pub fn new(
        joint_names: Vec<String>,
        parents: Vec<Option<usize>>,
        template_offsets: Vec<Vector3<f64>>,
        left_right_map: Vec<usize>,
    ) -> Result<Self> {
        let n = joint_names.len();
        if n == 0 {
            return Err(Error::InvalidTree("tree has no joints".into()));
        }
        for (what, len) in [
            ("parents", parents.len()),
            ("template_offsets", template_offsets.len()),
            ("left_right_map", left_right_map.len()),
        ] {
            if len != n {
                return Err(Error::InvalidTree(format!(
                    "{what} has {len} entries, joint_names has {n}"
                )));
            }
        }
        if parents[0].is_some() {
            return Err(Error::InvalidTree("joint 0 must be the root".into()));
        }
        for (k, p) in parents.iter().enumerate().skip(1) {
            match p {
                None => {
                    return Err(Error::InvalidTree(format!(
                        "joint {k} ({}) is a second root",
                        joint_names[k]
                    )))
                }
                Some(p) if *p >= k => {
                    return Err(Error::InvalidTree(format!(
                        "joint {k} ({}) has parent {p}; parents must precede children",
                        joint_names[k]
                    )))
                }
                _ => {}
            }
        }
        if template_offsets[0] != Vector3::zeros() {
            return Err(Error::InvalidTree("root template offset must be zero".into()));
        }
        for (k, &m) in left_right_map.iter().enumerate() {
            if m >= n {
                return Err(Error::InvalidTree(format!(
                    "left_right_map[{k}] = {m} is out of range"
                )));
            }
            if left_right_map[m] != k {
                return Err(Error::InvalidTree(format!(
                    "left_right_map is not an involution at joint {k}"
                )));
            }
        }
        if left_right_map[0] != 0 {
            return Err(Error::InvalidTree("left_right_map must fix the root".into()));
        }

        let mut children = vec![Vec::new(); n];
        for (k, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(k);
            }
        }
        Ok(KinematicTree {
            joint_names,
            parents,
            template_offsets,
            left_right_map,
            children,
        })
    }

    pub fn from_file(file: TreeFile) -> Result<Self> {
        let parents = file
            .parents
            .iter()
            .enumerate()
            .map(|(k, &p)| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(Error::InvalidTree(format!("parents[{k}] = {p} is invalid"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let offsets = file
            .template_offsets
            .iter()
            .map(|o| Vector3::new(o[0], o[1], o[2]))
            .collect();
        Self::new(file.joint_names, parents, offsets, file.left_right_map)
    }

    pub fn to_file(&self) -> TreeFile {
        TreeFile {
            joint_names: self.joint_names.clone(),
            parents: self
                .parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            template_offsets: self.template_offsets.iter().map(|o| [o.x, o.y, o.z]).collect(),
            left_right_map: self.left_right_map.clone(),
        }
    }

    /// 22-joint body tree.
    pub fn body22() -> Self {
        Self::preset_from_json(BODY22_JSON)
    }

    /// 22 body joints plus thumb and pinky on each hand.
    pub fn body26() -> Self {
        Self::preset_from_json(BODY26_JSON)
    }

    /// Looks up a shipped preset by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "body22" => Some(Self::body22()),
            "body26" => Some(Self::body26()),
            _ => None,
        }
    }

    fn preset_from_json(json: &str) -> Self {
        let file: TreeFile = serde_json::from_str(json).expect("shipped preset parses");
        Self::from_file(file).expect("shipped preset is valid")
    }

    pub fn len(&self) -> usize {
        self.joint_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_names.is_empty()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parents[k]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn template_offset(&self, k: usize) -> &Vector3<f64> {
        &self.template_offsets[k]
    }

    pub fn template_offsets(&self) -> &[Vector3<f64>] {
        &self.template_offsets
    }

    pub fn left_right_map(&self) -> &[usize] {
        &self.left_right_map
    }

    pub fn mirror(&self, k: usize) -> usize {
        self.left_right_map[k]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Whether `j` is `k` or lies below it.
    pub fn is_in_subtree(&self, j: usize, k: usize) -> bool {
        let mut cur = Some(j);
        while let Some(c) = cur {
            if c == k {
                return true;
            }
            if c < k {
                return false;
            }
            cur = self.parents[c];
        }
        false
    }

    /// True when mirroring across `x = 0` maps the template onto itself:
    /// `parent(mirror(k)) = mirror(parent(k))` and
    /// `offset(mirror(k)) = diag(−1,1,1)·offset(k)` within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.len()).all(|k| {
            let m = self.left_right_map[k];
            let parent_ok = self.parents[m] == self.parents[k].map(|p| self.left_right_map[p]);
            let o = self.template_offsets[k];
            let mirrored = Vector3::new(-o.x, o.y, o.z);
            parent_ok && (self.template_offsets[m] - mirrored).norm() <= tol
        })
    }
}

/// Per-bone scale factors applied to the template offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyShape {
    pub bone_scales: Vec<f64>,
}

impl BodyShape {
    pub fn new(bone_scales: Vec<f64>) -> Result<Self> {
        if let Some((k, s)) = bone_scales
            .iter()
            .enumerate()
            .find(|(_, s)| !(**s > 0.0 && s.is_finite()))
        {
            return Err(Error::InvalidShape(format!(
                "bone_scales[{k}] = {s} must be positive"
            )));
        }
        Ok(BodyShape { bone_scales })
    }

    pub fn uniform(joints: usize) -> Self {
        BodyShape {
            bone_scales: vec![1.0; joints],
        }
    }

    pub fn len(&self) -> usize {
        self.bone_scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bone_scales.is_empty()
    }

    pub fn check(&self, tree: &KinematicTree) -> Result<()> {
        if self.len() != tree.len() {
            return Err(Error::mismatch("bone scales", tree.len(), self.len()));
        }
        Ok(())
    }

    /// Scaled offset of joint `k` from its parent.
    pub fn offset(&self, tree: &KinematicTree, k: usize) -> Vector3<f64> {
        tree.template_offset(k) * self.bone_scales[k]
    }
}
