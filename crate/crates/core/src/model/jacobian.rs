use nalgebra::{DMatrix, Matrix3, Vector3};

use super::{relu, BodyModel};
use crate::error::Result;

/// Jacobian of the posed vertices. Rows are vertex-major (`3i + d` is
/// coordinate `d` of vertex `i`); pose columns are `3k + a` for axis-angle
/// component `a` of joint `k`; shape columns follow the shape directions.
#[derive(Debug, Clone)]
pub struct ForwardJacobian {
    pub pose: DMatrix<f64>,
    pub shape: DMatrix<f64>,
}

/// One non-zero `3 × 3` block of the corrective term's pose Jacobian:
/// derivative of joint `joint`'s corrective at `vertex` with respect to the
/// axis-angle of joint `member`.
#[derive(Debug, Clone)]
pub struct CorrectiveBlock {
    pub joint: usize,
    pub vertex: usize,
    pub member: usize,
    pub block: Matrix3<f64>,
}

impl BodyModel {
    /// Analytic derivatives of [`BodyModel::forward_vertices`] with respect
    /// to pose and all shape coefficients.
    pub fn forward_jacobian(&self, beta: &[f64], pose: &[f64]) -> Result<ForwardJacobian> {
        let eval = self.evaluate(beta, pose)?;
        let skel = &eval.skeleton;
        let n = self.num_vertices();
        let k = self.num_joints();
        let nb = self.num_betas();

        let blends: Vec<Matrix3<f64>> = (0..n).map(|i| self.blend_transform(skel, i).0).collect();
        let tp = |i: usize| {
            Vector3::new(
                eval.posed_template[3 * i],
                eval.posed_template[3 * i + 1],
                eval.posed_template[3 * i + 2],
            )
        };

        let mut jac_pose = DMatrix::zeros(3 * n, 3 * k);
        let mut d_global = vec![Matrix3::zeros(); k];
        let mut d_posed = vec![Vector3::zeros(); k];
        let mut d_tp = vec![0.0; 3 * n];
        for m in 0..k {
            for a in 0..3 {
                let col = 3 * m + a;
                // chain derivative; only the subtree of m moves
                for j in 0..k {
                    let moved = self.tree.is_ancestor_or_self(m, j);
                    if !moved {
                        d_global[j] = Matrix3::zeros();
                        d_posed[j] = Vector3::zeros();
                        continue;
                    }
                    match self.tree.parent(j) {
                        None => {
                            d_global[j] = skel.dlocal[j][a];
                            d_posed[j] = Vector3::zeros();
                        }
                        Some(p) => {
                            let own = if j == m {
                                skel.global[p] * skel.dlocal[j][a]
                            } else {
                                Matrix3::zeros()
                            };
                            d_global[j] = d_global[p] * skel.local[j] + own;
                            d_posed[j] = d_posed[p]
                                + d_global[p] * (skel.rest_joints[j] - skel.rest_joints[p]);
                        }
                    }
                }
                let d_trans: Vec<Vector3<f64>> = (0..k)
                    .map(|j| d_posed[j] - d_global[j] * skel.rest_joints[j])
                    .collect();

                d_tp.iter_mut().for_each(|x| *x = 0.0);
                let dq: Vec<f64> = (0..4).map(|c| skel.dquats[m][c][a]).collect();
                let mut any_corrective = false;
                for j in 1..k {
                    let members = self.nbhd.get(j)?;
                    if let Some(s) = members.iter().position(|&x| x == m) {
                        let mut df = vec![0.0; 4 * members.len() + 1];
                        df[4 * s..4 * s + 4].copy_from_slice(&dq);
                        self.accumulate_corrective(j, &df, &mut d_tp);
                        any_corrective = true;
                    }
                }

                for i in 0..n {
                    let mut dv = Vector3::zeros();
                    let x = tp(i);
                    for j in 0..k {
                        let w = self.skinning_weights[(i, j)];
                        if w == 0.0 || !self.tree.is_ancestor_or_self(m, j) {
                            continue;
                        }
                        dv += (d_global[j] * x + d_trans[j]) * w;
                    }
                    if any_corrective {
                        dv += blends[i]
                            * Vector3::new(d_tp[3 * i], d_tp[3 * i + 1], d_tp[3 * i + 2]);
                    }
                    for d in 0..3 {
                        jac_pose[(3 * i + d, col)] = dv[d];
                    }
                }
            }
        }

        let mut jac_shape = DMatrix::zeros(3 * n, nb);
        let shape_corrective = {
            let mut out = vec![0.0; 3 * n];
            for j in 1..k {
                let f = self.nbhd.feature_len(j)?;
                let mut df = vec![0.0; f];
                df[f - 1] = 1.0;
                self.accumulate_corrective(j, &df, &mut out);
            }
            out
        };
        for b in 0..nb {
            let dir: Vec<f64> = self.shape_dirs.column(b).iter().copied().collect();
            let dj = self.joint_regressor.apply_points(&dir);
            let dj: Vec<Vector3<f64>> = dj
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect();
            let mut d_posed = vec![Vector3::zeros(); k];
            for j in 0..k {
                d_posed[j] = match self.tree.parent(j) {
                    None => dj[j],
                    Some(p) => d_posed[p] + skel.global[p] * (dj[j] - dj[p]),
                };
            }
            let d_trans: Vec<Vector3<f64>> = (0..k)
                .map(|j| d_posed[j] - skel.global[j] * dj[j])
                .collect();
            let with_beta2 = b == self.beta2_index;
            for i in 0..n {
                let mut dtp = Vector3::new(dir[3 * i], dir[3 * i + 1], dir[3 * i + 2]);
                if with_beta2 {
                    dtp += Vector3::new(
                        shape_corrective[3 * i],
                        shape_corrective[3 * i + 1],
                        shape_corrective[3 * i + 2],
                    );
                }
                let mut dv = blends[i] * dtp;
                for j in 0..k {
                    let w = self.skinning_weights[(i, j)];
                    if w != 0.0 {
                        dv += d_trans[j] * w;
                    }
                }
                for d in 0..3 {
                    jac_shape[(3 * i + d, b)] = dv[d];
                }
            }
        }

        Ok(ForwardJacobian {
            pose: jac_pose,
            shape: jac_shape,
        })
    }

    /// Non-zero pose-Jacobian blocks of the (unskinned) corrective term,
    /// grouped per joint term. Only supported vertices and neighborhood
    /// members can appear.
    pub fn corrective_jacobian_blocks(&self, pose: &[f64]) -> Result<Vec<CorrectiveBlock>> {
        let shaped = self.template.clone();
        let joints = self.regress_joints(&shaped)?;
        let skel = self.skeleton(pose, &joints)?;
        let mut out = Vec::new();
        for j in 1..self.num_joints() {
            let c = self.corrective(j)?;
            let members = self.nbhd.get(j)?;
            let f = c.rows.feature_len();
            for (slot, &v) in c.rows.vertices().iter().enumerate() {
                let act = relu(c.activations[v]);
                if act == 0.0 {
                    continue;
                }
                let rows = c.rows.block(slot);
                for (s, &m) in members.iter().enumerate() {
                    let mut block = Matrix3::zeros();
                    for d in 0..3 {
                        for a in 0..3 {
                            block[(d, a)] = act
                                * (0..4)
                                    .map(|q| rows[d * f + 4 * s + q] * skel.dquats[m][q][a])
                                    .sum::<f64>();
                        }
                    }
                    out.push(CorrectiveBlock {
                        joint: j,
                        vertex: v,
                        member: m,
                        block,
                    });
                }
            }
        }
        Ok(out)
    }
}
