use super::{KinematicTree, Mesh, SparseRows};
use crate::error::{Result, StarError};

/// How the vertex set "around" a joint is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedRule {
    /// Support of the joint-regressor row; the `fallback` nearest vertices
    /// to the rest joint location when the row is empty.
    RegressorSupport { fallback: usize },
    /// The `m` vertices nearest to the rest joint location.
    Nearest(usize),
}

impl Default for SeedRule {
    fn default() -> Self {
        SeedRule::RegressorSupport { fallback: 8 }
    }
}

/// Seed vertex sets per joint. `joint_locations` are the rest-pose joint
/// positions used by the nearest-vertex rule.
pub fn joint_seed_vertices(
    mesh: &Mesh,
    tree: &KinematicTree,
    joint_regressor: &SparseRows,
    joint_locations: &[[f64; 3]],
    rule: SeedRule,
) -> Result<Vec<Vec<usize>>> {
    let k = tree.num_joints();
    if joint_regressor.num_rows() != k || joint_locations.len() != k {
        return Err(StarError::invalid(format!(
            "expected {k} regressor rows and joint locations, got {} and {}",
            joint_regressor.num_rows(),
            joint_locations.len()
        )));
    }
    (0..k)
        .map(|j| {
            let seeds = match rule {
                SeedRule::RegressorSupport { fallback } => {
                    let support: Vec<usize> = joint_regressor
                        .row(j)
                        .iter()
                        .filter(|(_, w)| *w != 0.0)
                        .map(|&(i, _)| i)
                        .collect();
                    if support.is_empty() {
                        nearest_vertices(mesh, joint_locations[j], fallback)
                    } else {
                        support
                    }
                }
                SeedRule::Nearest(m) => nearest_vertices(mesh, joint_locations[j], m),
            };
            if seeds.is_empty() {
                return Err(StarError::invalid(format!(
                    "joint {j} has no candidate seed vertices"
                )));
            }
            Ok(seeds)
        })
        .collect()
}

fn nearest_vertices(mesh: &Mesh, at: [f64; 3], m: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d2 = (0..3).map(|c| (v[c] - at[c]).powi(2)).sum::<f64>();
            (d2, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = order.into_iter().take(m).map(|(_, i)| i).collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> (Mesh, KinematicTree) {
        let mesh = Mesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        (mesh, KinematicTree::chain(2).unwrap())
    }

    #[test]
    fn regressor_support_is_used() {
        let (mesh, tree) = square();
        let reg = SparseRows::new(4, vec![vec![(3, 0.5), (1, 0.5)], vec![(2, 1.0)]]).unwrap();
        let seeds = joint_seed_vertices(&mesh, &tree, &reg, &[[0.0; 3]; 2], SeedRule::default())
            .unwrap();
        assert_eq!(seeds[0], vec![1, 3]);
        assert_eq!(seeds[1], vec![2]);
    }

    #[test]
    fn empty_row_falls_back_to_nearest() {
        let (mesh, tree) = square();
        let reg = SparseRows::new(4, vec![vec![], vec![(2, 1.0)]]).unwrap();
        let seeds = joint_seed_vertices(
            &mesh,
            &tree,
            &reg,
            &[[0.9, 0.2, 0.0], [0.0; 3]],
            SeedRule::RegressorSupport { fallback: 1 },
        )
        .unwrap();
        assert_eq!(seeds[0], vec![1]);
    }

    #[test]
    fn zero_fallback_is_an_error() {
        let (mesh, tree) = square();
        let reg = SparseRows::new(4, vec![vec![], vec![(2, 1.0)]]).unwrap();
        assert!(joint_seed_vertices(
            &mesh,
            &tree,
            &reg,
            &[[0.0; 3]; 2],
            SeedRule::RegressorSupport { fallback: 0 }
        )
        .is_err());
    }
}
