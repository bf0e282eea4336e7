use nalgebra::{Matrix3, Vector3};

use super::{relu, BodyModel};
use crate::error::{Result, StarError};
use crate::meshcore::Mesh;
use crate::quat::{axis_angle_matrix_with_partials, rotation_matrix, Quaternion};

/// Posed kinematic chain for one pose and one set of rest joints.
#[derive(Debug, Clone)]
pub(crate) struct Skeleton {
    pub quats: Vec<Quaternion>,
    pub dquats: Vec<[[f64; 3]; 4]>,
    pub local: Vec<Matrix3<f64>>,
    pub dlocal: Vec<[Matrix3<f64>; 3]>,
    pub global: Vec<Matrix3<f64>>,
    pub rest_joints: Vec<Vector3<f64>>,
    pub posed_joints: Vec<Vector3<f64>>,
    /// `posed_joint - global * rest_joint`: translation of each skinning
    /// transform.
    pub translations: Vec<Vector3<f64>>,
}

/// Intermediate quantities of one forward evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub features: Vec<Vec<f64>>,
    pub posed_template: Vec<f64>,
    pub skeleton: Skeleton,
    pub vertices: Vec<f64>,
}

/// Stored versus dense-equivalent corrective parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub nonzero: usize,
    pub dense: usize,
}

impl ParamCount {
    pub fn ratio(&self) -> f64 {
        if self.dense == 0 {
            0.0
        } else {
            self.nonzero as f64 / self.dense as f64
        }
    }
}

impl BodyModel {
    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() > self.num_betas() {
            return Err(StarError::invalid(format!(
                "{} shape coefficients given, model has {}",
                beta.len(),
                self.num_betas()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(StarError::invalid("shape coefficients must be finite"));
        }
        Ok(())
    }

    fn check_pose(&self, pose: &[f64]) -> Result<()> {
        let k = self.num_joints();
        if pose.len() != 3 * k {
            return Err(StarError::invalid(format!(
                "pose has {} entries, expected {}",
                pose.len(),
                3 * k
            )));
        }
        Ok(())
    }

    /// Linear combination of shape directions; missing trailing
    /// coefficients count as zero.
    pub fn shape_blend(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_beta(beta)?;
        let mut out = vec![0.0; self.template.len()];
        for (n, &b) in beta.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(self.shape_dirs.column(n).iter()) {
                *o += b * s;
            }
        }
        Ok(out)
    }

    pub fn shaped_vertices(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.shape_blend(beta)?;
        for (o, t) in v.iter_mut().zip(&self.template) {
            *o += t;
        }
        Ok(v)
    }

    pub fn regress_joints(&self, shaped: &[f64]) -> Result<Vec<f64>> {
        if shaped.len() != self.template.len() {
            return Err(StarError::invalid(format!(
                "vertex vector has {} entries, expected {}",
                shaped.len(),
                self.template.len()
            )));
        }
        Ok(self.joint_regressor.apply_points(shaped))
    }

    /// ReLU-thresholded activation weights of joint `j`.
    pub fn activation(&self, j: usize) -> Result<Vec<f64>> {
        Ok(self.corrective(j)?.activations.iter().map(|&w| relu(w)).collect())
    }

    /// Vertices with positive activation for joint `j`.
    pub fn support_set(&self, j: usize) -> Result<Vec<usize>> {
        Ok(self
            .corrective(j)?
            .activations
            .iter()
            .enumerate()
            .filter(|(_, &w)| relu(w) > 0.0)
            .map(|(i, _)| i)
            .collect())
    }

    /// Corrective features for every non-root joint, indexed by joint
    /// (entry 0 is empty).
    pub(crate) fn features_from_quats(&self, quats: &[Quaternion], beta2: f64) -> Vec<Vec<f64>> {
        let rest = self.tree.rest_quaternions();
        let mut out = vec![Vec::new()];
        for j in 1..self.num_joints() {
            let members = self.nbhd.get(j).expect("non-root joint");
            let mut f = Vec::with_capacity(4 * members.len() + 1);
            for &m in members {
                let (q, r) = (quats[m].to_array(), rest[m].to_array());
                f.extend((0..4).map(|c| q[c] - r[c]));
            }
            f.push(beta2);
            out.push(f);
        }
        out
    }

    /// Adds joint `j`'s masked corrective for `feature` into `out`. Vertices
    /// with zero activation are never written.
    pub(crate) fn accumulate_corrective(&self, j: usize, feature: &[f64], out: &mut [f64]) {
        let c = &self.correctives[j - 1];
        let f = c.rows.feature_len();
        for (slot, &v) in c.rows.vertices().iter().enumerate() {
            let a = relu(c.activations[v]);
            if a == 0.0 {
                continue;
            }
            let block = c.rows.block(slot);
            for d in 0..3 {
                let row = &block[d * f..(d + 1) * f];
                let p: f64 = row.iter().zip(feature).map(|(k, x)| k * x).sum();
                out[3 * v + d] += a * p;
            }
        }
    }

    fn quats_of(&self, pose: &[f64]) -> Result<Vec<Quaternion>> {
        self.check_pose(pose)?;
        pose.chunks_exact(3)
            .map(|v| crate::quat::axis_angle_to_quaternion([v[0], v[1], v[2]]))
            .collect()
    }

    /// Masked pose corrective of a single non-root joint.
    pub fn pose_corrective_joint(&self, pose: &[f64], beta2: f64, j: usize) -> Result<Vec<f64>> {
        self.corrective(j)?;
        let quats = self.quats_of(pose)?;
        let features = self.features_from_quats(&quats, beta2);
        let mut out = vec![0.0; self.template.len()];
        self.accumulate_corrective(j, &features[j], &mut out);
        Ok(out)
    }

    /// Sum of all per-joint correctives, in ascending joint order.
    pub fn pose_correctives(&self, pose: &[f64], beta2: f64) -> Result<Vec<f64>> {
        let quats = self.quats_of(pose)?;
        let features = self.features_from_quats(&quats, beta2);
        let mut out = vec![0.0; self.template.len()];
        for j in 1..self.num_joints() {
            self.accumulate_corrective(j, &features[j], &mut out);
        }
        Ok(out)
    }

    /// Largest absolute corrective offset at the rest pose for a given
    /// `beta2`. Non-zero whenever the shape column of a regressor is.
    pub fn rest_corrective_magnitude(&self, beta2: f64) -> f64 {
        let rest = self.tree.rest_pose();
        self.pose_correctives(&rest, beta2)
            .map(|v| v.iter().fold(0.0, |m: f64, x| m.max(x.abs())))
            .unwrap_or(0.0)
    }

    pub fn posed_template(&self, beta: &[f64], pose: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.shaped_vertices(beta)?;
        let corr = self.pose_correctives(pose, self.beta2(beta))?;
        for (o, c) in v.iter_mut().zip(&corr) {
            *o += c;
        }
        Ok(v)
    }

    pub(crate) fn skeleton(&self, pose: &[f64], joints: &[f64]) -> Result<Skeleton> {
        self.check_pose(pose)?;
        let k = self.num_joints();
        if joints.len() != 3 * k {
            return Err(StarError::invalid(format!(
                "joint vector has {} entries, expected {}",
                joints.len(),
                3 * k
            )));
        }
        let rest = self.tree.rest_quaternions();
        let mut quats = Vec::with_capacity(k);
        let mut dquats = Vec::with_capacity(k);
        let mut local = Vec::with_capacity(k);
        let mut dlocal = Vec::with_capacity(k);
        for (j, v) in pose.chunks_exact(3).enumerate() {
            let (q, dq, r, dr) = axis_angle_matrix_with_partials([v[0], v[1], v[2]])?;
            let rest_t = rotation_matrix(&rest[j]).transpose();
            quats.push(q);
            dquats.push(dq);
            local.push(r * rest_t);
            dlocal.push([dr[0] * rest_t, dr[1] * rest_t, dr[2] * rest_t]);
        }
        let rest_joints: Vec<Vector3<f64>> = joints
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        let mut global: Vec<Matrix3<f64>> = Vec::with_capacity(k);
        let mut posed_joints: Vec<Vector3<f64>> = Vec::with_capacity(k);
        for j in 0..k {
            match self.tree.parent(j) {
                None => {
                    global.push(local[j]);
                    posed_joints.push(rest_joints[j]);
                }
                Some(p) => {
                    global.push(global[p] * local[j]);
                    posed_joints.push(posed_joints[p] + global[p] * (rest_joints[j] - rest_joints[p]));
                }
            }
        }
        let translations = (0..k)
            .map(|j| posed_joints[j] - global[j] * rest_joints[j])
            .collect();
        Ok(Skeleton {
            quats,
            dquats,
            local,
            dlocal,
            global,
            rest_joints,
            posed_joints,
            translations,
        })
    }

    /// Per-vertex blended rotation `sum_k W_ik G_k` and translation.
    pub(crate) fn blend_transform(&self, skel: &Skeleton, i: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let mut m = Matrix3::zeros();
        let mut t = Vector3::zeros();
        for k in 0..self.num_joints() {
            let w = self.skinning_weights[(i, k)];
            if w == 0.0 {
                continue;
            }
            m += skel.global[k] * w;
            t += skel.translations[k] * w;
        }
        (m, t)
    }

    pub(crate) fn skin(&self, skel: &Skeleton, posed_template: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; posed_template.len()];
        for (i, (src, dst)) in posed_template
            .chunks_exact(3)
            .zip(out.chunks_exact_mut(3))
            .enumerate()
        {
            let (m, t) = self.blend_transform(skel, i);
            let v = m * Vector3::new(src[0], src[1], src[2]) + t;
            dst.copy_from_slice(v.as_slice());
        }
        out
    }

    /// Linear blend skinning of `posed_template` about rest joints `joints`.
    pub fn lbs(&self, posed_template: &[f64], joints: &[f64], pose: &[f64]) -> Result<Vec<f64>> {
        if posed_template.len() != self.template.len() {
            return Err(StarError::invalid(format!(
                "posed template has {} entries, expected {}",
                posed_template.len(),
                self.template.len()
            )));
        }
        let skel = self.skeleton(pose, joints)?;
        Ok(self.skin(&skel, posed_template))
    }

    pub(crate) fn evaluate(&self, beta: &[f64], pose: &[f64]) -> Result<Evaluation> {
        let shaped = self.shaped_vertices(beta)?;
        let joints = self.regress_joints(&shaped)?;
        let skeleton = self.skeleton(pose, &joints)?;
        let features = self.features_from_quats(&skeleton.quats, self.beta2(beta));
        let mut posed_template = shaped;
        for j in 1..self.num_joints() {
            self.accumulate_corrective(j, &features[j], &mut posed_template);
        }
        let vertices = self.skin(&skeleton, &posed_template);
        Ok(Evaluation {
            features,
            posed_template,
            skeleton,
            vertices,
        })
    }

    /// Posed vertex coordinates as a flat `3N` vector.
    pub fn forward_vertices(&self, beta: &[f64], pose: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(beta, pose)?.vertices)
    }

    /// Posed joint positions as a flat `3K` vector.
    pub fn posed_joints(&self, beta: &[f64], pose: &[f64]) -> Result<Vec<f64>> {
        let shaped = self.shaped_vertices(beta)?;
        let joints = self.regress_joints(&shaped)?;
        let skel = self.skeleton(pose, &joints)?;
        Ok(skel.posed_joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
    }

    pub fn forward(&self, beta: &[f64], pose: &[f64]) -> Result<Mesh> {
        Mesh::from_flat(&self.forward_vertices(beta, pose)?, self.faces.clone())
    }

    /// Non-zero corrective parameters (rows of supported vertices plus
    /// positive activations) against the dense-equivalent count.
    pub fn count_nonzero_params(&self) -> ParamCount {
        let n = self.num_vertices();
        let mut count = ParamCount { nonzero: 0, dense: 0 };
        for c in &self.correctives {
            let f = c.rows.feature_len();
            count.dense += n * 3 * f + n;
            let stored_active = c
                .rows
                .vertices()
                .iter()
                .filter(|&&v| relu(c.activations[v]) > 0.0)
                .count();
            count.nonzero += stored_active * 3 * f;
            count.nonzero += c.activations.iter().filter(|&&w| relu(w) > 0.0).count();
        }
        count
    }
}
