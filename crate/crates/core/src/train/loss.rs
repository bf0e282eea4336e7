use nalgebra::{DMatrix, Vector3};

use super::Registration;
use crate::error::{Result, StarError};
use crate::model::{relu, BodyModel};

/// Effective regularization weights for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Lambdas {
    pub blend: f64,
    pub activation: f64,
    pub prior: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub data: f64,
    pub blend: f64,
    pub activation: f64,
    pub skinning: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.blend + self.activation + self.skinning
    }
}

/// Gradient of the training objective, laid out like the model's own
/// parameters: `rows[j - 1]` matches joint `j`'s stored regressor rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub rows: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    pub skinning: DMatrix<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &BodyModel) -> Self {
        Gradients {
            rows: model
                .correctives()
                .iter()
                .map(|c| vec![0.0; c.rows.weights().len()])
                .collect(),
            activations: model
                .correctives()
                .iter()
                .map(|c| vec![0.0; c.activations.len()])
                .collect(),
            skinning: DMatrix::zeros(model.num_vertices(), model.num_joints()),
        }
    }

    /// Name of the first parameter block holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        for (idx, r) in self.rows.iter().enumerate() {
            if r.iter().any(|x| !x.is_finite()) {
                return Some(format!("corrective regressor of joint {}", idx + 1));
            }
        }
        for (idx, a) in self.activations.iter().enumerate() {
            if a.iter().any(|x| !x.is_finite()) {
                return Some(format!("activations of joint {}", idx + 1));
            }
        }
        self.skinning
            .iter()
            .any(|x| !x.is_finite())
            .then(|| "skinning weights".to_string())
    }
}

/// Batch mean of per-registration Euclidean residual norms.
pub fn loss_data(model: &BodyModel, batch: &[Registration]) -> Result<f64> {
    if batch.is_empty() {
        return Err(StarError::invalid("empty batch"));
    }
    let mut sum = 0.0;
    for reg in batch {
        let v = model.forward_vertices(reg.shape(), reg.pose())?;
        if v.len() != reg.vertices().len() {
            return Err(StarError::invalid("registration size does not match model"));
        }
        sum += v
            .iter()
            .zip(reg.vertices())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    Ok(sum / batch.len() as f64)
}

/// `λ_b Σ_j ‖K_j‖_F`.
pub fn loss_blend(model: &BodyModel, lambda_b: f64) -> f64 {
    lambda_b
        * model
            .correctives()
            .iter()
            .map(|c| c.rows.frobenius_norm())
            .sum::<f64>()
}

/// `λ_c Σ_j Σ_i relu(w_ij)`.
pub fn loss_activation(model: &BodyModel, lambda_c: f64) -> f64 {
    lambda_c
        * model
            .correctives()
            .iter()
            .flat_map(|c| c.activations.iter())
            .map(|&w| relu(w))
            .sum::<f64>()
}

/// `λ_p ‖W − W_prior‖_F + λ_s ‖W‖_1`.
pub fn loss_skinning(model: &BodyModel, prior: &DMatrix<f64>, lambda_p: f64, lambda_s: f64) -> f64 {
    let w = model.skinning_weights();
    lambda_p * (w - prior).norm() + lambda_s * w.iter().map(|x| x.abs()).sum::<f64>()
}

/// Full objective and its gradient with respect to regressor rows,
/// activation weights and skinning weights. Subgradients at the ReLU kink,
/// at L1 zeros and at zero norms are taken as zero.
pub fn total_loss(
    model: &BodyModel,
    batch: &[Registration],
    lambdas: &Lambdas,
    prior: &DMatrix<f64>,
) -> Result<(LossBreakdown, Gradients)> {
    if batch.is_empty() {
        return Err(StarError::invalid("empty batch"));
    }
    let n = model.num_vertices();
    let k = model.num_joints();
    let mut grads = Gradients::zeros_like(model);
    let mut losses = LossBreakdown::default();
    let scale = 1.0 / batch.len() as f64;

    for reg in batch {
        let eval = model.evaluate(reg.shape(), reg.pose())?;
        if reg.vertices().len() != 3 * n {
            return Err(StarError::invalid("registration size does not match model"));
        }
        let residual: Vec<f64> = eval
            .vertices
            .iter()
            .zip(reg.vertices())
            .map(|(a, b)| a - b)
            .collect();
        let norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
        losses.data += scale * norm;
        if norm == 0.0 {
            continue;
        }
        let coef = scale / norm;
        let skel = &eval.skeleton;

        // dL/d(posed template) per vertex
        let mut h = vec![Vector3::zeros(); n];
        for i in 0..n {
            let g = Vector3::new(residual[3 * i], residual[3 * i + 1], residual[3 * i + 2]) * coef;
            let tp = Vector3::new(
                eval.posed_template[3 * i],
                eval.posed_template[3 * i + 1],
                eval.posed_template[3 * i + 2],
            );
            let mut blend = nalgebra::Matrix3::zeros();
            for j in 0..k {
                let w = model.skinning_weights()[(i, j)];
                let moved = skel.global[j] * tp + skel.translations[j];
                grads.skinning[(i, j)] += g.dot(&moved);
                blend += skel.global[j] * w;
            }
            h[i] = blend.transpose() * g;
        }

        for (idx, c) in model.correctives().iter().enumerate() {
            let feature = &eval.features[idx + 1];
            let f = c.rows.feature_len();
            let grow = &mut grads.rows[idx];
            let gact = &mut grads.activations[idx];
            for (slot, &v) in c.rows.vertices().iter().enumerate() {
                let w = c.activations[v];
                if w <= 0.0 {
                    continue;
                }
                let block = c.rows.block(slot);
                let mut dot = 0.0;
                for d in 0..3 {
                    let row = &block[d * f..(d + 1) * f];
                    let p: f64 = row.iter().zip(feature).map(|(a, b)| a * b).sum();
                    dot += h[v][d] * p;
                    let out = &mut grow[slot * 3 * f + d * f..slot * 3 * f + (d + 1) * f];
                    for (o, x) in out.iter_mut().zip(feature) {
                        *o += w * h[v][d] * x;
                    }
                }
                gact[v] += dot;
            }
        }
    }

    // regularizers
    for (idx, c) in model.correctives().iter().enumerate() {
        let norm = c.rows.frobenius_norm();
        losses.blend += lambdas.blend * norm;
        if norm > 0.0 && lambdas.blend != 0.0 {
            for (g, x) in grads.rows[idx].iter_mut().zip(c.rows.weights()) {
                *g += lambdas.blend * x / norm;
            }
        }
        for (g, &w) in grads.activations[idx].iter_mut().zip(&c.activations) {
            if w > 0.0 {
                losses.activation += lambdas.activation * w;
                *g += lambdas.activation;
            }
        }
    }
    let w = model.skinning_weights();
    let diff = w - prior;
    let dnorm = diff.norm();
    losses.skinning = lambdas.prior * dnorm + lambdas.sparsity * w.iter().map(|x| x.abs()).sum::<f64>();
    if dnorm > 0.0 && lambdas.prior != 0.0 {
        grads.skinning += &diff * (lambdas.prior / dnorm);
    }
    if lambdas.sparsity != 0.0 {
        for (g, &x) in grads.skinning.iter_mut().zip(w.iter()) {
            if x != 0.0 {
                *g += lambdas.sparsity * x.signum();
            }
        }
    }
    Ok((losses, grads))
}
