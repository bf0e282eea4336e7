//! The body model: shape blend shapes, per-joint masked pose correctives,
//! joint regression and linear blend skinning.

mod forward;
mod io;
mod jacobian;

use nalgebra::DMatrix;

use crate::error::{Result, StarError};
use crate::meshcore::{JointNeighborhood, KinematicTree, Mesh, SparseRows};

pub use forward::ParamCount;
pub use io::{audit_model_json, load_model, model_from_json, model_to_json, save_model, MODEL_KIND};
pub use jacobian::{CorrectiveBlock, ForwardJacobian};

const SUM_TOL: f64 = 1e-9;

/// ReLU applied to an activation weight.
#[inline]
pub fn relu(w: f64) -> f64 {
    if w > 0.0 {
        w
    } else {
        0.0
    }
}

/// Corrective regressor rows keyed by vertex. Each stored vertex owns three
/// consecutive rows (x, y, z) of `feature_len` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectiveRows {
    feature_len: usize,
    vertices: Vec<usize>,
    weights: Vec<f64>,
}

impl CorrectiveRows {
    pub fn new(feature_len: usize, vertices: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != vertices.len() * 3 * feature_len {
            return Err(StarError::invalid(format!(
                "{} corrective weights for {} vertices of feature length {feature_len}",
                weights.len(),
                vertices.len()
            )));
        }
        if vertices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StarError::invalid(
                "corrective vertex indices must be strictly increasing",
            ));
        }
        Ok(CorrectiveRows {
            feature_len,
            vertices,
            weights,
        })
    }

    /// Every vertex stored, all weights zero.
    pub fn zeros(num_vertices: usize, feature_len: usize) -> Self {
        CorrectiveRows {
            feature_len,
            vertices: (0..num_vertices).collect(),
            weights: vec![0.0; num_vertices * 3 * feature_len],
        }
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn is_dense(&self, num_vertices: usize) -> bool {
        self.vertices.len() == num_vertices
    }

    /// The `3 × feature_len` block of stored slot `slot`, row-major.
    pub fn block(&self, slot: usize) -> &[f64] {
        let w = 3 * self.feature_len;
        &self.weights[slot * w..(slot + 1) * w]
    }

    pub fn slot_of(&self, vertex: usize) -> Option<usize> {
        self.vertices.binary_search(&vertex).ok()
    }

    /// Expands to every vertex, filling missing rows with zeros.
    pub fn to_dense(&self, num_vertices: usize) -> Self {
        let w = 3 * self.feature_len;
        let mut out = CorrectiveRows::zeros(num_vertices, self.feature_len);
        for (slot, &v) in self.vertices.iter().enumerate() {
            out.weights[v * w..(v + 1) * w].copy_from_slice(self.block(slot));
        }
        out
    }

    /// Keeps only the listed vertices' rows.
    pub fn retain(&self, keep: impl Fn(usize) -> bool) -> Self {
        let w = 3 * self.feature_len;
        let mut vertices = Vec::new();
        let mut weights = Vec::new();
        for (slot, &v) in self.vertices.iter().enumerate() {
            if keep(v) {
                vertices.push(v);
                weights.extend_from_slice(&self.weights[slot * w..(slot + 1) * w]);
            }
        }
        CorrectiveRows {
            feature_len: self.feature_len,
            vertices,
            weights,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.weights.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Corrective of one non-root joint: regressor rows plus the per-vertex
/// activation weights that gate them.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrective {
    pub joint: usize,
    pub activations: Vec<f64>,
    pub rows: CorrectiveRows,
}

/// Everything needed to assemble a [`BodyModel`].
#[derive(Debug, Clone)]
pub struct BodyModelParts {
    pub template: Vec<f64>,
    pub faces: Vec<[usize; 3]>,
    pub shape_dirs: DMatrix<f64>,
    pub joint_regressor: SparseRows,
    pub skinning_weights: DMatrix<f64>,
    pub correctives: Vec<Corrective>,
    pub tree: KinematicTree,
    pub beta2_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub(crate) template: Vec<f64>,
    pub(crate) faces: Vec<[usize; 3]>,
    pub(crate) shape_dirs: DMatrix<f64>,
    pub(crate) joint_regressor: SparseRows,
    pub(crate) skinning_weights: DMatrix<f64>,
    pub(crate) correctives: Vec<Corrective>,
    pub(crate) tree: KinematicTree,
    pub(crate) nbhd: JointNeighborhood,
    pub(crate) beta2_index: usize,
}

/// Outcome of one named model invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl BodyModel {
    pub fn new(parts: BodyModelParts) -> Result<Self> {
        let model = BodyModel::assemble(parts)?;
        if let Some(failed) = model.validate().into_iter().find(|c| !c.passed) {
            return Err(StarError::validation(format!(
                "{}: {}",
                failed.name, failed.detail
            )));
        }
        Ok(model)
    }

    /// Builds a model after checking only that all dimensions agree.
    pub(crate) fn assemble(parts: BodyModelParts) -> Result<Self> {
        let nbhd = JointNeighborhood::from_tree(&parts.tree);
        let model = BodyModel {
            template: parts.template,
            faces: parts.faces,
            shape_dirs: parts.shape_dirs,
            joint_regressor: parts.joint_regressor,
            skinning_weights: parts.skinning_weights,
            correctives: parts.correctives,
            tree: parts.tree,
            nbhd,
            beta2_index: parts.beta2_index,
        };
        model.check_dimensions()?;
        Ok(model)
    }

    fn check_dimensions(&self) -> Result<()> {
        let n = self.template.len() / 3;
        let k = self.tree.num_joints();
        let err = |m: String| Err(StarError::validation(m));
        if self.template.len() != 3 * n || n == 0 {
            return err(format!("template length {} is not 3N", self.template.len()));
        }
        if self.shape_dirs.nrows() != 3 * n {
            return err(format!(
                "shape directions have {} rows, expected {}",
                self.shape_dirs.nrows(),
                3 * n
            ));
        }
        if self.joint_regressor.num_rows() != k || self.joint_regressor.num_cols() != n {
            return err(format!(
                "joint regressor is {}x{}, expected {k}x{n}",
                self.joint_regressor.num_rows(),
                self.joint_regressor.num_cols()
            ));
        }
        if self.skinning_weights.nrows() != n || self.skinning_weights.ncols() != k {
            return err(format!(
                "skinning weights are {}x{}, expected {n}x{k}",
                self.skinning_weights.nrows(),
                self.skinning_weights.ncols()
            ));
        }
        if self.correctives.len() != k - 1 {
            return err(format!(
                "{} correctives for {} non-root joints",
                self.correctives.len(),
                k - 1
            ));
        }
        for (idx, c) in self.correctives.iter().enumerate() {
            let j = idx + 1;
            if c.joint != j {
                return err(format!("corrective {idx} is for joint {}, expected {j}", c.joint));
            }
            if c.activations.len() != n {
                return err(format!("joint {j} has {} activation weights", c.activations.len()));
            }
            let f = self.nbhd.feature_len(j)?;
            if c.rows.feature_len() != f {
                return err(format!(
                    "joint {j} regressor has feature length {}, expected {f}",
                    c.rows.feature_len()
                ));
            }
            if c.rows.vertices().last().is_some_and(|&v| v >= n) {
                return err(format!("joint {j} regressor references a vertex out of range"));
            }
        }
        if self.shape_dirs.ncols() > 0 && self.beta2_index >= self.shape_dirs.ncols() {
            return err(format!(
                "beta2 index {} out of range for {} shape directions",
                self.beta2_index,
                self.shape_dirs.ncols()
            ));
        }
        Mesh::new(
            self.template.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            self.faces.clone(),
        )?;
        Ok(())
    }

    /// Runs every model invariant and reports each outcome.
    pub fn validate(&self) -> Vec<InvariantCheck> {
        let mut out = Vec::new();
        let mut push = |name, failure: Option<String>| {
            out.push(InvariantCheck {
                name,
                passed: failure.is_none(),
                detail: failure.unwrap_or_else(|| "ok".into()),
            })
        };

        push(
            "dimensions",
            self.check_dimensions().err().map(|e| e.to_string()),
        );

        let finite = self.template.iter().all(|x| x.is_finite())
            && self.shape_dirs.iter().all(|x| x.is_finite())
            && self.skinning_weights.iter().all(|x| x.is_finite())
            && self.joint_regressor.rows().flatten().all(|(_, w)| w.is_finite())
            && self.correctives.iter().all(|c| {
                c.activations.iter().all(|x| x.is_finite())
                    && c.rows.weights().iter().all(|x| x.is_finite())
            });
        push("finite", (!finite).then(|| "non-finite parameter".into()));

        let skin = (0..self.skinning_weights.nrows()).find_map(|i| {
            let row = self.skinning_weights.row(i);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| w < 0.0) {
                Some(format!("vertex {i} has a negative skinning weight"))
            } else if (sum - 1.0).abs() > SUM_TOL {
                Some(format!("vertex {i} skinning weights sum to {sum}"))
            } else {
                None
            }
        });
        push("skinning_weights_convex", skin);

        let jreg = self.joint_regressor.rows().enumerate().find_map(|(j, row)| {
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            if row.iter().any(|&(_, w)| w < 0.0) {
                Some(format!("joint {j} has a negative regressor weight"))
            } else if (sum - 1.0).abs() > SUM_TOL {
                Some(format!("joint {j} regressor weights sum to {sum}"))
            } else {
                None
            }
        });
        push("joint_regressor_convex", jreg);

        let n = self.num_vertices();
        let pruned = self.correctives.iter().find_map(|c| {
            if c.rows.is_dense(n) {
                return None;
            }
            c.rows.vertices().iter().enumerate().find_map(|(slot, &v)| {
                let dead = relu(c.activations[v]) == 0.0;
                (dead && c.rows.block(slot).iter().any(|&x| x != 0.0)).then(|| {
                    format!("joint {} stores non-zero rows for inactive vertex {v}", c.joint)
                })
            })
        });
        push("pruned_rows_zero", pruned);

        let nb = JointNeighborhood::from_tree(&self.tree);
        push(
            "neighborhoods",
            (nb != self.nbhd).then(|| "neighbor lists disagree with the tree".into()),
        );
        out
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len() / 3
    }

    pub fn num_joints(&self) -> usize {
        self.tree.num_joints()
    }

    pub fn num_betas(&self) -> usize {
        self.shape_dirs.ncols()
    }

    pub fn beta2_index(&self) -> usize {
        self.beta2_index
    }

    pub fn template(&self) -> &[f64] {
        &self.template
    }

    pub fn template_mesh(&self) -> Mesh {
        Mesh::from_flat(&self.template, self.faces.clone()).expect("validated at construction")
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn shape_dirs(&self) -> &DMatrix<f64> {
        &self.shape_dirs
    }

    pub fn joint_regressor(&self) -> &SparseRows {
        &self.joint_regressor
    }

    pub fn skinning_weights(&self) -> &DMatrix<f64> {
        &self.skinning_weights
    }

    pub fn tree(&self) -> &KinematicTree {
        &self.tree
    }

    pub fn neighborhood(&self) -> &JointNeighborhood {
        &self.nbhd
    }

    pub fn correctives(&self) -> &[Corrective] {
        &self.correctives
    }

    /// Corrective of non-root joint `j`.
    pub fn corrective(&self, j: usize) -> Result<&Corrective> {
        if j == 0 {
            return Err(StarError::invalid(
                "the root joint has no pose corrective",
            ));
        }
        self.correctives
            .get(j - 1)
            .ok_or_else(|| StarError::invalid(format!("joint {j} out of range")))
    }

    pub(crate) fn corrective_mut(&mut self, j: usize) -> &mut Corrective {
        &mut self.correctives[j - 1]
    }

    pub fn set_activations(&mut self, j: usize, activations: Vec<f64>) -> Result<()> {
        self.corrective(j)?;
        if activations.len() != self.num_vertices() {
            return Err(StarError::invalid(format!(
                "{} activations for {} vertices",
                activations.len(),
                self.num_vertices()
            )));
        }
        self.corrective_mut(j).activations = activations;
        Ok(())
    }

    pub fn set_corrective_rows(&mut self, j: usize, rows: CorrectiveRows) -> Result<()> {
        let f = self.nbhd.feature_len(j)?;
        if rows.feature_len() != f || rows.vertices().last().is_some_and(|&v| v >= self.num_vertices()) {
            return Err(StarError::invalid(format!(
                "regressor rows do not fit joint {j}"
            )));
        }
        self.corrective_mut(j).rows = rows;
        Ok(())
    }

    pub fn set_skinning_weights(&mut self, weights: DMatrix<f64>) -> Result<()> {
        if weights.shape() != self.skinning_weights.shape() {
            return Err(StarError::invalid("skinning weight shape mismatch"));
        }
        self.skinning_weights = weights;
        Ok(())
    }

    /// Copy with every corrective stored densely.
    pub fn to_dense_storage(&self) -> BodyModel {
        let n = self.num_vertices();
        let mut out = self.clone();
        for c in &mut out.correctives {
            c.rows = c.rows.to_dense(n);
        }
        out
    }

    /// Copy with all regressor weights zeroed (dense storage), keeping the
    /// activations.
    pub fn with_zero_correctives(&self) -> BodyModel {
        let n = self.num_vertices();
        let mut out = self.clone();
        for c in &mut out.correctives {
            c.rows = CorrectiveRows::zeros(n, c.rows.feature_len());
        }
        out
    }

    pub(crate) fn beta2(&self, beta: &[f64]) -> f64 {
        beta.get(self.beta2_index).copied().unwrap_or(0.0)
    }
}
