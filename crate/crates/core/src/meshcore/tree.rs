use crate::error::{Result, StarError};
use crate::quat::Quaternion;

const UNIT_TOL: f64 = 1e-12;

/// Joint hierarchy. Joint 0 is the root and every other joint's parent
/// precedes it.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    parents: Vec<Option<usize>>,
    names: Vec<String>,
    rest: Vec<Quaternion>,
}

impl KinematicTree {
    pub fn new(
        parents: Vec<Option<usize>>,
        names: Vec<String>,
        rest: Vec<Quaternion>,
    ) -> Result<Self> {
        let k = parents.len();
        if k == 0 {
            return Err(StarError::invalid("kinematic tree has no joints"));
        }
        if names.len() != k || rest.len() != k {
            return Err(StarError::invalid(format!(
                "tree with {k} joints has {} names and {} rest quaternions",
                names.len(),
                rest.len()
            )));
        }
        if parents[0].is_some() {
            return Err(StarError::invalid("joint 0 must be the root"));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                None => {
                    return Err(StarError::invalid(format!(
                        "joint {j} has no parent; only joint 0 may be a root"
                    )))
                }
                Some(p) if *p >= j => {
                    return Err(StarError::invalid(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )))
                }
                _ => {}
            }
        }
        for (j, q) in rest.iter().enumerate() {
            if (q.norm() - 1.0).abs() > UNIT_TOL {
                return Err(StarError::invalid(format!(
                    "rest quaternion of joint {j} has norm {}",
                    q.norm()
                )));
            }
        }
        Ok(KinematicTree {
            parents,
            names,
            rest: rest.into_iter().map(Quaternion::canonical).collect(),
        })
    }

    /// Tree with identity rest rotations and generated names.
    pub fn with_identity_rest(parents: Vec<Option<usize>>) -> Result<Self> {
        let k = parents.len();
        let names = (0..k).map(|j| format!("joint{j}")).collect();
        KinematicTree::new(parents, names, vec![Quaternion::IDENTITY; k])
    }

    /// Serial chain `0 <- 1 <- ... <- k-1`.
    pub fn chain(k: usize) -> Result<Self> {
        KinematicTree::with_identity_rest((0..k).map(|j| j.checked_sub(1)).collect())
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rest_quaternions(&self) -> &[Quaternion] {
        &self.rest
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(j))
            .map(|(c, _)| c)
    }

    /// Axis-angle pose whose joint rotations equal the rest quaternions.
    pub fn rest_pose(&self) -> Vec<f64> {
        self.rest.iter().flat_map(|q| q.to_axis_angle()).collect()
    }

    /// Whether `ancestor` lies on the path from `j` to the root (inclusive).
    pub fn is_ancestor_or_self(&self, ancestor: usize, mut j: usize) -> bool {
        loop {
            if j == ancestor {
                return true;
            }
            match self.parents[j] {
                Some(p) => j = p,
                None => return false,
            }
        }
    }
}

/// Per non-root joint: the joint itself, then its parent, then its children
/// in ascending index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointNeighborhood {
    sets: Vec<Vec<usize>>,
}

impl JointNeighborhood {
    pub fn from_tree(tree: &KinematicTree) -> Self {
        let sets = (0..tree.num_joints())
            .map(|j| match tree.parent(j) {
                None => Vec::new(),
                Some(p) => {
                    let mut s = vec![j, p];
                    s.extend(tree.children(j));
                    s
                }
            })
            .collect();
        JointNeighborhood { sets }
    }

    pub fn get(&self, j: usize) -> Result<&[usize]> {
        match self.sets.get(j) {
            None => Err(StarError::invalid(format!("joint {j} out of range"))),
            Some(s) if s.is_empty() => Err(StarError::invalid(format!(
                "joint {j} is the root and has no corrective neighborhood"
            ))),
            Some(s) => Ok(s),
        }
    }

    /// Length of joint `j`'s corrective feature: four per quaternion plus
    /// the shape slot.
    pub fn feature_len(&self, j: usize) -> Result<usize> {
        Ok(4 * self.get(j)?.len() + 1)
    }

    /// Raw neighbor lists indexed by joint; the root's list is empty.
    pub fn lists(&self) -> &[Vec<usize>] {
        &self.sets
    }
}
