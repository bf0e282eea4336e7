//! Training of pose correctives, activation masks and skinning weights by
//! mini-batch SGD with annealed regularization, plus post-training pruning.

mod init;
mod loss;

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{decode_f64s, encode_f64s, parse_kind, read_text, FORMAT_VERSION};
use crate::error::{Result, StarError};
use crate::fit::{fit, v2v, FitOptions};
use crate::model::{relu, BodyModel, CorrectiveRows};

pub use init::{init_activations, initialize_model, InitConfig};
pub use loss::{
    loss_activation, loss_blend, loss_data, loss_skinning, total_loss, Gradients, Lambdas,
    LossBreakdown,
};

pub const DATASET_KIND: &str = "registrations";

/// One registered mesh with the pose and shape that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    vertices: Vec<f64>,
    pose: Vec<f64>,
    shape: Vec<f64>,
}

impl Registration {
    pub fn new(vertices: Vec<f64>, pose: Vec<f64>, shape: Vec<f64>) -> Result<Self> {
        if !vertices.len().is_multiple_of(3) || !pose.len().is_multiple_of(3) {
            return Err(StarError::invalid(
                "registration vertices and pose must have lengths divisible by 3",
            ));
        }
        if vertices.iter().chain(&pose).chain(&shape).any(|x| !x.is_finite()) {
            return Err(StarError::invalid("registration contains non-finite values"));
        }
        Ok(Registration {
            vertices,
            pose,
            shape,
        })
    }

    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    pub fn pose(&self) -> &[f64] {
        &self.pose
    }

    pub fn shape(&self) -> &[f64] {
        &self.shape
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    registrations: Vec<Registration>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    kind: String,
    num_vertices: usize,
    registrations: Vec<RegistrationFile>,
}

#[derive(Serialize, Deserialize)]
struct RegistrationFile {
    vertices: String,
    pose: String,
    shape: String,
}

impl Dataset {
    pub fn new(registrations: Vec<Registration>) -> Result<Self> {
        let first = registrations
            .first()
            .ok_or_else(|| StarError::invalid("dataset is empty"))?;
        let (nv, np, ns) = (first.vertices.len(), first.pose.len(), first.shape.len());
        if registrations
            .iter()
            .any(|r| r.vertices.len() != nv || r.pose.len() != np || r.shape.len() != ns)
        {
            return Err(StarError::invalid(
                "registrations in a dataset must share dimensions",
            ));
        }
        Ok(Dataset { registrations })
    }

    pub fn registrations(&self) -> &[Registration] {
        &self.registrations
    }

    pub fn len(&self) -> usize {
        self.registrations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registrations.is_empty()
    }

    /// Splits off the last `count` registrations.
    pub fn split_tail(&self, count: usize) -> Result<(Dataset, Dataset)> {
        if count == 0 || count >= self.len() {
            return Err(StarError::invalid(format!(
                "cannot hold out {count} of {} registrations",
                self.len()
            )));
        }
        let cut = self.len() - count;
        Ok((
            Dataset::new(self.registrations[..cut].to_vec())?,
            Dataset::new(self.registrations[cut..].to_vec())?,
        ))
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            format_version: FORMAT_VERSION,
            kind: DATASET_KIND.into(),
            num_vertices: self.registrations[0].vertices.len() / 3,
            registrations: self
                .registrations
                .iter()
                .map(|r| RegistrationFile {
                    vertices: encode_f64s(&r.vertices),
                    pose: encode_f64s(&r.pose),
                    shape: encode_f64s(&r.shape),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = parse_kind(text, DATASET_KIND)?;
        let regs = file
            .registrations
            .iter()
            .map(|r| {
                let reg = Registration::new(
                    decode_f64s(&r.vertices)?,
                    decode_f64s(&r.pose)?,
                    decode_f64s(&r.shape)?,
                )?;
                if reg.vertices.len() != 3 * file.num_vertices {
                    return Err(StarError::Format(format!(
                        "registration has {} coordinates, header says {} vertices",
                        reg.vertices.len(),
                        file.num_vertices
                    )));
                }
                Ok(reg)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(regs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| StarError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::from_json(&read_text(path.as_ref())?)
    }
}

/// Training settings. Key names are the accepted config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_b: f64,
    pub lambda_c: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    /// Geometric decay applied to each λ every `anneal_interval` epochs.
    pub decay_b: f64,
    pub decay_c: f64,
    pub decay_p: f64,
    pub decay_s: f64,
    pub anneal_interval: usize,
    pub step_size: f64,
    /// Step multipliers for the activation and skinning blocks.
    pub activation_step_scale: f64,
    pub skinning_step_scale: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Re-initialize correctives and activations before training.
    pub reinitialize: bool,
    pub init: InitConfig,
    /// One pose-refinement pass per epoch over every registration.
    pub refine_pose: bool,
    pub refine_iterations: usize,
    #[serde(skip)]
    pub skinning_prior: Option<DMatrix<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_b: 1e-3,
            lambda_c: 1e-3,
            lambda_p: 0.0,
            lambda_s: 0.0,
            decay_b: 0.8,
            decay_c: 0.8,
            decay_p: 1.0,
            decay_s: 1.0,
            anneal_interval: 5,
            step_size: 1e-3,
            activation_step_scale: 1.0,
            skinning_step_scale: 1.0,
            momentum: 0.0,
            batch_size: 10,
            epochs: 50,
            seed: 0,
            reinitialize: false,
            init: InitConfig::default(),
            refine_pose: false,
            refine_iterations: 5,
            skinning_prior: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_b, self.lambda_c, self.lambda_p, self.lambda_s];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(StarError::invalid("regularization weights must be non-negative"));
        }
        for d in [self.decay_b, self.decay_c, self.decay_p, self.decay_s] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(StarError::invalid(format!("decay factor {d} not in (0, 1]")));
            }
        }
        if self.batch_size == 0 || self.anneal_interval == 0 {
            return Err(StarError::invalid("batch size and anneal interval must be positive"));
        }
        if !(self.step_size > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(StarError::invalid("step size must be positive and momentum in [0, 1)"));
        }
        if let Some(prior) = &self.skinning_prior {
            for i in 0..prior.nrows() {
                let s: f64 = prior.row(i).sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(StarError::invalid(format!(
                        "skinning prior row {i} sums to {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Regularization weights in effect during `epoch` (0-based).
    pub fn lambdas_at(&self, epoch: usize) -> Lambdas {
        let m = (epoch / self.anneal_interval) as i32;
        Lambdas {
            blend: self.lambda_b * self.decay_b.powi(m),
            activation: self.lambda_c * self.decay_c.powi(m),
            prior: self.lambda_p * self.decay_p.powi(m),
            sparsity: self.lambda_s * self.decay_s.powi(m),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        parse_config(path, &text)
    }
}

/// Parses a TOML config, or JSON when the file has a `.json` extension.
pub(crate) fn parse_config<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(text).map_err(|e| StarError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    } else {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            StarError::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub v2v: f64,
    pub nonzero_params: usize,
    pub mean_support_size: f64,
}

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "total_loss",
    "L_D",
    "L_B",
    "L_A",
    "L_W",
    "v2v",
    "nonzero_params",
    "mean_support_size",
];

pub fn write_metrics_csv<W: Write>(out: W, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| StarError::Format(format!("csv write failed: {e}"));
    w.write_record(METRICS_HEADER).map_err(fail)?;
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            m.losses.total().to_string(),
            m.losses.data.to_string(),
            m.losses.blend.to_string(),
            m.losses.activation.to_string(),
            m.losses.skinning.to_string(),
            m.v2v.to_string(),
            m.nonzero_params.to_string(),
            m.mean_support_size.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush()
        .map_err(|e| StarError::Format(format!("csv flush failed: {e}")))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BodyModel,
    pub metrics: Vec<EpochMetrics>,
}

/// Objective terms and mean v2v over the whole dataset.
pub fn evaluate_dataset(
    model: &BodyModel,
    dataset: &Dataset,
    lambdas: &Lambdas,
    prior: &DMatrix<f64>,
) -> Result<(LossBreakdown, f64)> {
    let regs = dataset.registrations();
    let mut losses = LossBreakdown {
        data: loss_data(model, regs)?,
        blend: loss_blend(model, lambdas.blend),
        activation: loss_activation(model, lambdas.activation),
        skinning: loss_skinning(model, prior, lambdas.prior, lambdas.sparsity),
    };
    if !losses.total().is_finite() {
        losses.data = f64::NAN;
    }
    let mut err = 0.0;
    for r in regs {
        err += v2v(&model.forward_vertices(r.shape(), r.pose())?, r.vertices())?;
    }
    Ok((losses, err / regs.len() as f64))
}

fn mean_support_size(model: &BodyModel) -> f64 {
    let c = model.correctives();
    if c.is_empty() {
        return 0.0;
    }
    c.iter()
        .map(|c| c.activations.iter().filter(|&&w| relu(w) > 0.0).count())
        .sum::<usize>() as f64
        / c.len() as f64
}

/// Runs mini-batch SGD on the corrective regressors, activation weights and
/// skinning weights. Pose and shape of each registration are taken as
/// given (optionally refined once per epoch).
pub fn train(model: &BodyModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(StarError::invalid("dataset is empty"));
    }
    let n = model.num_vertices();
    if dataset.registrations()[0].vertices().len() != 3 * n {
        return Err(StarError::invalid(format!(
            "dataset has {} coordinates per registration, model has {}",
            dataset.registrations()[0].vertices().len(),
            3 * n
        )));
    }

    let mut model = if cfg.reinitialize {
        initialize_model(model, &model.template_mesh(), &cfg.init)?
    } else {
        model.to_dense_storage()
    };
    let prior = cfg
        .skinning_prior
        .clone()
        .unwrap_or_else(|| model.skinning_weights().clone());
    if prior.shape() != model.skinning_weights().shape() {
        return Err(StarError::invalid("skinning prior shape does not match the model"));
    }

    let mut regs = dataset.registrations().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..regs.len()).collect();
    let mut velocity = Gradients::zeros_like(&model);
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lambdas = cfg.lambdas_at(epoch);
        order.shuffle(&mut rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Registration> = chunk.iter().map(|&i| regs[i].clone()).collect();
            let (losses, grads) = total_loss(&model, &batch, &lambdas, &prior)?;
            let bad_block = if !losses.total().is_finite() {
                Some("objective".to_string())
            } else {
                grads.first_non_finite()
            };
            if let Some(block) = bad_block {
                return Err(StarError::Numerical {
                    epoch,
                    batch: batch_idx,
                    block,
                    message: format!("non-finite loss or gradient (loss {})", losses.total()),
                });
            }
            apply_step(&mut model, &grads, &mut velocity, cfg)?;
        }

        if cfg.refine_pose {
            let opts = FitOptions {
                max_iterations: cfg.refine_iterations,
                shape_coeffs: Some(0),
                ..FitOptions::default()
            };
            for r in regs.iter_mut() {
                let res = fit(&model, r.vertices(), r.pose(), r.shape(), &opts)?;
                r.pose = res.pose;
            }
        }

        let current = Dataset::new(regs.clone())?;
        let (losses, v2v_err) = evaluate_dataset(&model, &current, &lambdas, &prior)?;
        if !losses.total().is_finite() {
            return Err(StarError::Numerical {
                epoch,
                batch: 0,
                block: "epoch evaluation".into(),
                message: "non-finite objective".into(),
            });
        }
        metrics.push(EpochMetrics {
            epoch,
            losses,
            v2v: v2v_err,
            nonzero_params: model.count_nonzero_params().nonzero,
            mean_support_size: mean_support_size(&model),
        });
    }
    Ok(TrainOutcome { model, metrics })
}

fn apply_step(
    model: &mut BodyModel,
    grads: &Gradients,
    velocity: &mut Gradients,
    cfg: &TrainConfig,
) -> Result<()> {
    let mu = cfg.momentum;
    let lr = cfg.step_size;
    let update = |param: &mut f64, v: &mut f64, g: f64, rate: f64| {
        *v = mu * *v + g;
        *param -= rate * *v;
    };
    for j in 1..model.num_joints() {
        let idx = j - 1;
        let c = model.corrective_mut(j);
        for ((p, v), &g) in c
            .rows
            .weights_mut()
            .iter_mut()
            .zip(velocity.rows[idx].iter_mut())
            .zip(&grads.rows[idx])
        {
            update(p, v, g, lr);
        }
        for ((p, v), &g) in c
            .activations
            .iter_mut()
            .zip(velocity.activations[idx].iter_mut())
            .zip(&grads.activations[idx])
        {
            update(p, v, g, lr * cfg.activation_step_scale);
        }
    }

    let mut w = model.skinning_weights().clone();
    let previous = w.clone();
    for ((p, v), &g) in w
        .iter_mut()
        .zip(velocity.skinning.iter_mut())
        .zip(grads.skinning.iter())
    {
        update(p, v, g, lr * cfg.skinning_step_scale);
    }
    for i in 0..w.nrows() {
        for x in w.row_mut(i).iter_mut() {
            *x = x.max(0.0);
        }
        let s: f64 = w.row(i).sum();
        if s > 0.0 {
            w.row_mut(i).iter_mut().for_each(|x| *x /= s);
        } else {
            w.set_row(i, &previous.row(i));
        }
    }
    model.set_skinning_weights(w)
}

/// Zeroes activations with `relu(w) <= threshold` and drops the regressor
/// rows of every vertex left without support.
pub fn prune(model: &BodyModel, threshold: f64) -> Result<BodyModel> {
    if !(threshold >= 0.0) {
        return Err(StarError::invalid(format!(
            "prune threshold {threshold} must be non-negative"
        )));
    }
    let mut out = model.clone();
    for j in 1..out.num_joints() {
        let c = out.corrective_mut(j);
        for w in c.activations.iter_mut() {
            if relu(*w) <= threshold {
                *w = 0.0;
            }
        }
        let acts = c.activations.clone();
        let rows: CorrectiveRows = c.rows.retain(|v| acts[v] > 0.0);
        c.rows = rows;
    }
    Ok(out)
}

/// Saves per-epoch metrics as CSV.
pub fn save_metrics(path: impl AsRef<Path>, metrics: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| StarError::io(path, e))?;
    write_metrics_csv(file, metrics)
}
