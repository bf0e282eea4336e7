use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::meshcore::{geodesic_distances, joint_seed_vertices, Mesh, SeedRule};
use crate::model::BodyModel;

/// Activation initialization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Distances are clamped below at `floor * mean_edge_length` before
    /// taking the reciprocal.
    pub floor: f64,
    /// Number of nearest vertices used when a joint has no regressor
    /// support (or always, with `nearest_only`).
    pub seed_count: usize,
    pub nearest_only: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            floor: 1e-6,
            seed_count: 8,
            nearest_only: false,
        }
    }
}

impl InitConfig {
    pub fn seed_rule(&self) -> SeedRule {
        if self.nearest_only {
            SeedRule::Nearest(self.seed_count)
        } else {
            SeedRule::RegressorSupport {
                fallback: self.seed_count,
            }
        }
    }
}

/// Reciprocal of the geodesic distance to each joint's seed set, affinely
/// rescaled per joint to `[0, 1]`. Entry 0 (root) is empty.
pub fn init_activations(model: &BodyModel, mesh: &Mesh, cfg: &InitConfig) -> Result<Vec<Vec<f64>>> {
    let joints = model.regress_joints(&mesh.to_flat())?;
    let locations: Vec<[f64; 3]> = joints.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let seeds = joint_seed_vertices(
        mesh,
        model.tree(),
        model.joint_regressor(),
        &locations,
        cfg.seed_rule(),
    )?;
    let eps = cfg.floor * mesh.mean_edge_length();
    if !(eps > 0.0) {
        return Err(StarError::invalid(format!(
            "activation floor {} must be positive",
            cfg.floor
        )));
    }
    let mut out = vec![Vec::new()];
    for seed in seeds.iter().skip(1) {
        let dist = geodesic_distances(mesh, seed)?;
        out.push(reciprocal_rescaled(&dist, eps));
    }
    Ok(out)
}

pub(crate) fn reciprocal_rescaled(dist: &[f64], eps: f64) -> Vec<f64> {
    let recip: Vec<f64> = dist.iter().map(|&d| 1.0 / d.max(eps)).collect();
    let hi = recip.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = recip.iter().copied().fold(f64::INFINITY, f64::min);
    if hi == lo {
        return vec![1.0; recip.len()];
    }
    recip.iter().map(|&r| (r - lo) / (hi - lo)).collect()
}

/// Applies [`init_activations`] to a copy of `model`.
pub fn initialize_model(model: &BodyModel, mesh: &Mesh, cfg: &InitConfig) -> Result<BodyModel> {
    let acts = init_activations(model, mesh, cfg)?;
    let mut out = model.with_zero_correctives();
    for (j, a) in acts.into_iter().enumerate().skip(1) {
        out.set_activations(j, a)?;
    }
    Ok(out)
}
