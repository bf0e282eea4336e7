//! Procedural ground-truth bodies, registration datasets and shape
//! populations.
//!
//! The body is a tube along +x split into one segment per joint; joint `j`
//! sits on the ring at `x = j * segment_length`. Ground-truth correctives
//! are supported only on vertices within a geodesic radius of their joint.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::read_text;
use crate::error::{Result, StarError};
use crate::fit::ShapeDataset;
use crate::meshcore::{geodesic_distances, KinematicTree, Mesh, SparseRows};
use crate::model::{BodyModel, BodyModelParts, Corrective, CorrectiveRows};
use crate::train::{parse_config, Dataset, Registration};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub joints: usize,
    pub rings_per_segment: usize,
    pub ring_resolution: usize,
    pub segment_length: f64,
    pub tube_radius: f64,
    /// Ground-truth support radius as a fraction of the segment length.
    pub support_radius: f64,
    pub shape_modes: usize,
    /// Per-mode multipliers; missing entries default to 1.
    pub shape_scales: Vec<f64>,
    /// Ground-truth regressor entries are drawn uniformly in
    /// `±corrective_scale * mean_edge_length`.
    pub corrective_scale: f64,
    pub beta2_index: usize,
    pub pose_range: f64,
    pub shape_range: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            joints: 8,
            rings_per_segment: 6,
            ring_resolution: 12,
            segment_length: 0.25,
            tube_radius: 0.06,
            support_radius: 0.45,
            shape_modes: 10,
            shape_scales: Vec::new(),
            corrective_scale: 0.01,
            beta2_index: 1,
            pose_range: 0.5,
            shape_range: 1.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Reads a TOML config, or JSON when the file has a `.json` extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        parse_config(path, &read_text(path)?)
    }

    pub fn num_vertices(&self) -> usize {
        (self.joints * self.rings_per_segment + 1) * self.ring_resolution
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StarError::invalid(m));
        if self.joints < 2 {
            return bad(format!("need at least 2 joints, got {}", self.joints));
        }
        if self.rings_per_segment < 1 || self.ring_resolution < 3 {
            return bad("need at least one ring per segment and three vertices per ring".into());
        }
        if self.num_vertices() < 4 * self.joints {
            return bad(format!(
                "{} vertices is fewer than 4 per joint",
                self.num_vertices()
            ));
        }
        if !(self.support_radius > 0.0 && self.support_radius <= 1.0) {
            return bad(format!("support radius {} not in (0, 1]", self.support_radius));
        }
        if !(self.segment_length > 0.0 && self.tube_radius > 0.0) {
            return bad("segment length and tube radius must be positive".into());
        }
        if self.shape_modes > 0 && self.beta2_index >= self.shape_modes {
            return bad(format!(
                "beta2 index {} out of range for {} shape modes",
                self.beta2_index, self.shape_modes
            ));
        }
        if self.noise < 0.0 || self.pose_range < 0.0 || self.shape_range < 0.0 {
            return bad("ranges and noise must be non-negative".into());
        }
        Ok(())
    }

    fn ring_of_joint(&self, j: usize) -> usize {
        j * self.rings_per_segment
    }
}

/// Tube mesh of the configured body.
pub fn make_tube(cfg: &SynthConfig) -> Result<Mesh> {
    cfg.validate()?;
    let rings = cfg.joints * cfg.rings_per_segment + 1;
    let r = cfg.ring_resolution;
    let dx = cfg.segment_length / cfg.rings_per_segment as f64;
    let mut vertices = Vec::with_capacity(rings * r);
    for i in 0..rings {
        for a in 0..r {
            let phi = 2.0 * PI * a as f64 / r as f64;
            vertices.push([
                i as f64 * dx,
                cfg.tube_radius * phi.cos(),
                cfg.tube_radius * phi.sin(),
            ]);
        }
    }
    let mut faces = Vec::with_capacity(2 * (rings - 1) * r);
    for i in 0..rings - 1 {
        for a in 0..r {
            let b = (a + 1) % r;
            let (v00, v01, v10, v11) = (i * r + a, i * r + b, (i + 1) * r + a, (i + 1) * r + b);
            faces.push([v00, v01, v11]);
            faces.push([v00, v11, v10]);
        }
    }
    Mesh::new(vertices, faces)
}

/// Ring vertices at joint `j`.
pub fn joint_ring(cfg: &SynthConfig, j: usize) -> Vec<usize> {
    let start = cfg.ring_of_joint(j) * cfg.ring_resolution;
    (start..start + cfg.ring_resolution).collect()
}

/// Generates the ground-truth model and its template mesh.
pub fn make_body(cfg: &SynthConfig) -> Result<(BodyModel, Mesh)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mesh = make_tube(cfg)?;
    let n = mesh.num_vertices();
    let k = cfg.joints;
    let seg = cfg.segment_length;
    let total = k as f64 * seg;

    let regressor_rows = (0..k)
        .map(|j| {
            let ring = joint_ring(cfg, j);
            let w = 1.0 / ring.len() as f64;
            ring.into_iter().map(|v| (v, w)).collect()
        })
        .collect();
    let joint_regressor = SparseRows::new(n, regressor_rows)?;

    let mut skinning = DMatrix::zeros(n, k);
    for (i, v) in mesh.vertices().iter().enumerate() {
        let raw: Vec<f64> = (0..k)
            .map(|j| {
                let centre = (j as f64 + 0.5) * seg;
                (-((v[0] - centre) / (0.35 * seg)).powi(2)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        for j in 0..k {
            skinning[(i, j)] = raw[j] / sum;
        }
    }

    let mut modes: Vec<Vec<f64>> = (0..cfg.shape_modes)
        .map(|m| {
            let mut col = Vec::with_capacity(3 * n);
            for v in mesh.vertices() {
                let radial = [0.0, v[1] / cfg.tube_radius, v[2] / cfg.tube_radius];
                let phi = v[2].atan2(v[1]);
                let d = match m {
                    0 => [0.05 * v[0], 0.0, 0.0],
                    1 => radial.map(|c| 0.1 * cfg.tube_radius * c),
                    _ => {
                        let harmonic = (m - 2) % 3;
                        let wave = ((m - 2) / 3 + 1) as f64;
                        let amp = 0.05
                            * cfg.tube_radius
                            * (PI * wave * v[0] / total).cos()
                            * (harmonic as f64 * phi).cos();
                        radial.map(|c| amp * c)
                    }
                };
                col.extend_from_slice(&d);
            }
            let scale = cfg.shape_scales.get(m).copied().unwrap_or(1.0);
            col.iter_mut().for_each(|x| *x *= scale);
            col
        })
        .collect();
    if cfg.shape_modes > 1 {
        modes.swap(1, cfg.beta2_index);
    }
    let shape_dirs = DMatrix::from_fn(3 * n, cfg.shape_modes, |r, c| modes[c][r]);

    let tree = KinematicTree::new(
        (0..k).map(|j| j.checked_sub(1)).collect(),
        (0..k)
            .map(|j| if j == 0 { "root".to_string() } else { format!("segment{j}") })
            .collect(),
        vec![crate::quat::Quaternion::IDENTITY; k],
    )?;
    let nbhd = crate::meshcore::JointNeighborhood::from_tree(&tree);

    let radius = cfg.support_radius * seg;
    let entry = cfg.corrective_scale * mesh.mean_edge_length();
    let mut correctives = Vec::with_capacity(k - 1);
    for j in 1..k {
        let dist = geodesic_distances(&mesh, &joint_ring(cfg, j))?;
        let activations: Vec<f64> = dist.iter().map(|d| (radius - d) / radius).collect();
        let support: Vec<usize> = (0..n).filter(|&i| activations[i] > 0.0).collect();
        let f = nbhd.feature_len(j)?;
        let weights = (0..support.len() * 3 * f)
            .map(|_| rng.random_range(-entry..=entry))
            .collect();
        correctives.push(Corrective {
            joint: j,
            activations,
            rows: CorrectiveRows::new(f, support, weights)?,
        });
    }

    let model = BodyModel::new(BodyModelParts {
        template: mesh.to_flat(),
        faces: mesh.faces().to_vec(),
        shape_dirs,
        joint_regressor,
        skinning_weights: skinning,
        correctives,
        tree,
        beta2_index: cfg.beta2_index,
    })?;
    Ok((model, mesh))
}

/// Ground-truth support sets of a generated body (joint 0 is empty).
pub fn ground_truth_supports(model: &BodyModel) -> Vec<Vec<usize>> {
    std::iter::once(Vec::new())
        .chain((1..model.num_joints()).map(|j| model.support_set(j).expect("non-root")))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub count: usize,
    pub pose_range: f64,
    pub shape_range: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SampleSpec {
    pub fn from_config(cfg: &SynthConfig, count: usize) -> Self {
        SampleSpec {
            count,
            pose_range: cfg.pose_range,
            shape_range: cfg.shape_range,
            noise: cfg.noise,
            seed: cfg.seed.wrapping_add(1),
        }
    }
}

/// Draws poses and shapes uniformly and records the noisy posed meshes
/// along with their generating parameters.
pub fn sample_registrations(model: &BodyModel, spec: &SampleSpec) -> Result<Dataset> {
    if spec.noise < 0.0 || !spec.noise.is_finite() {
        return Err(StarError::invalid(format!("noise {} must be non-negative", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| StarError::invalid(e.to_string()))?;
    let k = model.num_joints();
    let nb = model.num_betas();
    let mut regs = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let pose: Vec<f64> = (0..3 * k)
            .map(|_| uniform(&mut rng, spec.pose_range))
            .collect();
        let shape: Vec<f64> = (0..nb).map(|_| uniform(&mut rng, spec.shape_range)).collect();
        let mut vertices = model.forward_vertices(&shape, &pose)?;
        if spec.noise > 0.0 {
            for v in vertices.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        regs.push(Registration::new(vertices, pose, shape)?);
    }
    Dataset::new(regs)
}

fn uniform(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    if range == 0.0 {
        0.0
    } else {
        rng.random_range(-range..=range)
    }
}

/// Two Gaussian populations over shape coefficients. Both are centred on
/// zero; each has large standard deviation on its own dominant modes and
/// small elsewhere. `major_std` and `minor_std` are vertex-space lengths:
/// coefficient `m` is drawn with standard deviation `std / ‖s_m‖` so every
/// mode displaces the mesh by the same amount per unit of std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub count_a: usize,
    pub count_b: usize,
    pub dominant_a: Vec<usize>,
    pub dominant_b: Vec<usize>,
    pub major_std: f64,
    pub minor_std: f64,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            count_a: 200,
            count_b: 200,
            dominant_a: vec![0, 1],
            dominant_b: vec![2, 3],
            major_std: 0.05,
            minor_std: 0.005,
            seed: 11,
        }
    }
}

impl PopulationConfig {
    /// Per-coefficient standard deviations of population A and B.
    pub fn stds(&self, model: &BodyModel) -> (Vec<f64>, Vec<f64>) {
        let norms: Vec<f64> = model.shape_dirs().column_iter().map(|c| c.norm()).collect();
        let build = |dominant: &[usize]| {
            norms
                .iter()
                .enumerate()
                .map(|(m, n)| {
                    let s = if dominant.contains(&m) { self.major_std } else { self.minor_std };
                    if *n > 0.0 { s / n } else { 0.0 }
                })
                .collect()
        };
        (build(&self.dominant_a), build(&self.dominant_b))
    }
}

pub fn make_shape_populations(
    model: &BodyModel,
    cfg: &PopulationConfig,
) -> Result<(ShapeDataset, ShapeDataset)> {
    let modes = model.num_betas();
    if cfg
        .dominant_a
        .iter()
        .chain(&cfg.dominant_b)
        .any(|&m| m >= modes)
    {
        return Err(StarError::invalid("dominant mode index out of range"));
    }
    let (std_a, std_b) = cfg.stds(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = population(model, &std_a, cfg.count_a, &mut rng)?;
    let b = population(model, &std_b, cfg.count_b, &mut rng)?;
    Ok((a, b))
}

fn population(
    model: &BodyModel,
    stds: &[f64],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ShapeDataset> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let beta: Vec<f64> = stds.iter().map(|s| s * normal.sample(rng)).collect();
        rows.push(model.shaped_vertices(&beta)?);
    }
    ShapeDataset::from_rows(&rows)
}

/// Small fully random model (12 vertices, three joints with the root
/// branching into two children) for derivative checks. Activations are
/// kept away from zero and skinning weights strictly positive.
pub fn tiny_model(seed: u64) -> BodyModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ring = 4;
    let mut vertices = Vec::new();
    for i in 0..3 {
        for a in 0..ring {
            let phi = 2.0 * PI * a as f64 / ring as f64 + 0.3 * i as f64;
            vertices.push([
                0.3 * i as f64 + rng.random_range(-0.02..0.02),
                0.1 * phi.cos() + rng.random_range(-0.02..0.02),
                0.1 * phi.sin() + rng.random_range(-0.02..0.02),
            ]);
        }
    }
    let mut faces = Vec::new();
    for i in 0..2 {
        for a in 0..ring {
            let b = (a + 1) % ring;
            faces.push([i * ring + a, i * ring + b, (i + 1) * ring + b]);
            faces.push([i * ring + a, (i + 1) * ring + b, (i + 1) * ring + a]);
        }
    }
    let n = vertices.len();
    let k = 3;
    let tree = KinematicTree::with_identity_rest(vec![None, Some(0), Some(0)]).expect("tree");
    let nbhd = crate::meshcore::JointNeighborhood::from_tree(&tree);

    let nb = 4;
    let shape_dirs = DMatrix::from_fn(3 * n, nb, |_, _| rng.random_range(-0.05..0.05));
    let regressor_rows = (0..k)
        .map(|j| {
            let picks = [(j * 4) % n, (j * 4 + 1) % n, (j * 4 + 5) % n];
            let raw: Vec<f64> = picks.iter().map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().sum();
            picks.iter().zip(raw).map(|(&v, w)| (v, w / s)).collect()
        })
        .collect();
    let mut skinning = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.1..1.0));
    for i in 0..n {
        let s: f64 = skinning.row(i).sum();
        for j in 0..k {
            skinning[(i, j)] /= s;
        }
    }
    let correctives = (1..k)
        .map(|j| {
            let f = nbhd.feature_len(j).expect("non-root");
            let activations = (0..n)
                .map(|_| {
                    let w: f64 = rng.random_range(0.1..1.0);
                    if rng.random_bool(0.25) { -w } else { w }
                })
                .collect();
            let weights = (0..n * 3 * f).map(|_| rng.random_range(-0.05..0.05)).collect();
            Corrective {
                joint: j,
                activations,
                rows: CorrectiveRows::new(f, (0..n).collect(), weights).expect("dense rows"),
            }
        })
        .collect();
    BodyModel::new(BodyModelParts {
        template: vertices.iter().flatten().copied().collect(),
        faces,
        shape_dirs,
        joint_regressor: SparseRows::new(n, regressor_rows).expect("regressor"),
        skinning_weights: skinning,
        correctives,
        tree,
        beta2_index: 1,
    })
    .expect("tiny model is valid")
}
