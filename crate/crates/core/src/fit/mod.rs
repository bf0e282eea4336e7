//! Pose and shape fitting by minimizing mean absolute vertex error, and
//! PCA shape-space analysis.

mod pca;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::write_json;
use crate::error::{Result, StarError};
use crate::model::BodyModel;

pub use pca::{
    explained_variance, explained_variance_curve, pca_fit, write_curve_csv, PcaBasis,
    ShapeDataset, PCA_BASIS_KIND, SHAPE_DATASET_KIND,
};

/// Mean absolute coordinate difference, scaled ×1000 (millimetres when the
/// model is in metres).
pub fn v2v(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(1000.0 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Mean Euclidean per-vertex distance, scaled ×1000.
pub fn v2v_per_vertex(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    if !a.len().is_multiple_of(3) {
        return Err(StarError::invalid("vertex vectors must have length 3N"));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let n = a.len() / 3;
    let sum: f64 = a
        .chunks_exact(3)
        .zip(b.chunks_exact(3))
        .map(|(p, q)| (0..3).map(|d| (p[d] - q[d]).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(1000.0 * sum / n as f64)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(StarError::invalid(format!(
            "vertex vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum V2vMetric {
    #[default]
    PerCoordinate,
    PerVertex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once the relative objective decrease of a step falls below this.
    pub tolerance: f64,
    /// `δ` in the smooth absolute value `sqrt(x² + δ²)`.
    pub smoothing: f64,
    /// Starting `δ`; it is divided by 10 per stage until it reaches
    /// `smoothing`.
    pub initial_smoothing: f64,
    /// Number of leading shape coefficients left free; `None` frees all.
    pub shape_coeffs: Option<usize>,
    pub metric: V2vMetric,
    /// Curvature pairs kept for the quasi-Newton direction; 0 gives plain
    /// gradient descent.
    pub memory: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            tolerance: 1e-8,
            smoothing: 1e-8,
            initial_smoothing: 1e-3,
            shape_coeffs: None,
            metric: V2vMetric::PerCoordinate,
            memory: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(rename = "theta")]
    pub pose: Vec<f64>,
    #[serde(rename = "beta")]
    pub shape: Vec<f64>,
    #[serde(rename = "v2v")]
    pub v2v_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

const STAGE_TOLERANCE: f64 = 1e-6;

struct Objective<'a> {
    model: &'a BodyModel,
    target: &'a [f64],
    delta: f64,
    free_shape: usize,
    num_pose: usize,
}

impl Objective<'_> {
    fn split(&self, x: &[f64], shape_tail: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pose = x[..self.num_pose].to_vec();
        let mut shape = shape_tail.to_vec();
        shape[..self.free_shape].copy_from_slice(&x[self.num_pose..]);
        (pose, shape)
    }

    fn value(&self, vertices: &[f64]) -> f64 {
        let d2 = self.delta * self.delta;
        vertices
            .iter()
            .zip(self.target)
            .map(|(v, t)| ((v - t).powi(2) + d2).sqrt())
            .sum::<f64>()
            / vertices.len() as f64
    }

    fn gradient(&self, pose: &[f64], shape: &[f64], vertices: &[f64]) -> Result<Vec<f64>> {
        let jac = self.model.forward_jacobian(shape, pose)?;
        let d2 = self.delta * self.delta;
        let m = vertices.len() as f64;
        let weights: Vec<f64> = vertices
            .iter()
            .zip(self.target)
            .map(|(v, t)| {
                let r = v - t;
                r / (r * r + d2).sqrt() / m
            })
            .collect();
        let mut g = Vec::with_capacity(self.num_pose + self.free_shape);
        for c in 0..self.num_pose {
            g.push(jac.pose.column(c).iter().zip(&weights).map(|(a, b)| a * b).sum());
        }
        for c in 0..self.free_shape {
            g.push(jac.shape.column(c).iter().zip(&weights).map(|(a, b)| a * b).sum());
        }
        Ok(g)
    }
}

/// Limited-memory quasi-Newton descent with backtracking line search on the smoothed mean
/// absolute vertex error, over pose and the first `shape_coeffs` shape
/// coefficients. Returns the best iterate seen.
pub fn fit(
    model: &BodyModel,
    target: &[f64],
    init_pose: &[f64],
    init_shape: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    if target.len() != 3 * model.num_vertices() {
        return Err(StarError::invalid(format!(
            "target has {} coordinates, model has {}",
            target.len(),
            3 * model.num_vertices()
        )));
    }
    if target.iter().any(|x| !x.is_finite()) {
        return Err(StarError::invalid("target contains non-finite values"));
    }
    if init_pose.len() != 3 * model.num_joints() {
        return Err(StarError::invalid(format!(
            "initial pose has {} entries, expected {}",
            init_pose.len(),
            3 * model.num_joints()
        )));
    }
    let nb = model.num_betas();
    if init_shape.len() > nb {
        return Err(StarError::invalid(format!(
            "{} initial shape coefficients for a model with {nb}",
            init_shape.len()
        )));
    }
    let mut shape_full = init_shape.to_vec();
    shape_full.resize(nb, 0.0);
    let free_shape = opts.shape_coeffs.unwrap_or(nb).min(nb);

    let mut obj = Objective {
        model,
        target,
        delta: opts.smoothing,
        free_shape,
        num_pose: init_pose.len(),
    };
    let report = |v: &[f64]| match opts.metric {
        V2vMetric::PerCoordinate => v2v(v, target),
        V2vMetric::PerVertex => v2v_per_vertex(v, target),
    };

    let mut stages = Vec::new();
    let mut delta = opts.initial_smoothing;
    while delta > opts.smoothing {
        stages.push(delta);
        delta *= 0.1;
    }
    stages.push(opts.smoothing);

    let mut x: Vec<f64> = init_pose
        .iter()
        .chain(&shape_full[..free_shape])
        .copied()
        .collect();
    let (pose, shape) = obj.split(&x, &shape_full);
    let mut verts = model.forward_vertices(&shape, &pose)?;
    let mut best = (report(&verts)?, x.clone());
    let mut iterations = 0;
    let mut converged = false;

    for (stage, &delta) in stages.iter().enumerate() {
        let last_stage = stage + 1 == stages.len();
        let tolerance = if last_stage {
            opts.tolerance
        } else {
            opts.tolerance.max(STAGE_TOLERANCE)
        };
        obj.delta = delta;
        let (pose, shape) = obj.split(&x, &shape_full);
        let mut f = obj.value(&verts);
        let mut g = obj.gradient(&pose, &shape, &verts)?;
        let mut history = LbfgsHistory::new(opts.memory);
        while iterations < opts.max_iterations {
            if g.iter().all(|v| *v == 0.0) {
                converged = last_stage;
                break;
            }
            let mut dir = history.direction(&g);
            let mut slope = dot(&g, &dir);
            let mut step = 1.0;
            if slope >= 0.0 || history.is_empty() {
                history.clear();
                dir = g.iter().map(|v| -v).collect();
                slope = dot(&g, &dir);
                step = 1.0 / slope.abs().sqrt().max(1.0);
            }
            let mut accepted = None;
            while step > 1e-20 {
                let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                let (p, s) = obj.split(&cand, &shape_full);
                let v = model.forward_vertices(&s, &p)?;
                let fc = obj.value(&v);
                if fc <= f + 1e-4 * step * slope {
                    accepted = Some((cand, v, fc));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, v, fc)) = accepted else {
                break;
            };
            iterations += 1;
            let rel = (f - fc) / f.max(f64::MIN_POSITIVE);
            let (p, s) = obj.split(&cand, &shape_full);
            let g_new = obj.gradient(&p, &s, &v)?;
            history.push(
                cand.iter().zip(&x).map(|(a, b)| a - b).collect(),
                g_new.iter().zip(&g).map(|(a, b)| a - b).collect(),
            );
            x = cand;
            verts = v;
            f = fc;
            g = g_new;
            let err = report(&verts)?;
            if err < best.0 {
                best = (err, x.clone());
            }
            if rel < tolerance {
                converged = last_stage;
                break;
            }
        }
        if iterations >= opts.max_iterations {
            break;
        }
    }

    let (pose, shape) = obj.split(&best.1, &shape_full);
    Ok(FitResult {
        pose,
        shape,
        v2v_error: best.0,
        iterations,
        converged,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct LbfgsHistory {
    capacity: usize,
    pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl LbfgsHistory {
    fn new(capacity: usize) -> Self {
        LbfgsHistory {
            capacity,
            pairs: Default::default(),
        }
    }

    fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if self.capacity == 0 {
            return;
        }
        let sy = dot(&s, &y);
        if sy <= 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() || sy <= 0.0 {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion; returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}
