//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation or data error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::container::{peek_header, read_text};
use crate::error::{Result, StarError};
use crate::fit::{
    explained_variance_curve, fit, pca_fit, write_curve_csv, FitOptions, PcaBasis, ShapeDataset,
    V2vMetric,
};
use crate::meshcore::load_obj;
use crate::model::{audit_model_json, load_model, save_model, BodyModel};
use crate::synth::{make_body, make_shape_populations, sample_registrations, PopulationConfig, SampleSpec, SynthConfig};
use crate::train::{prune, save_metrics, train, Dataset, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "star", version, about = "Sparse articulated body model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a procedural ground-truth model.
    SynthModel {
        /// Synthesis config (TOML, or JSON by extension); defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the template mesh as OBJ.
        #[arg(long)]
        mesh_out: Option<PathBuf>,
        /// Replace the ground-truth correctives by zero regressors with every
        /// activation set to 1.
        #[arg(long)]
        blank: bool,
    },
    /// Sample registrations, or two shape populations with --populations.
    SynthData {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        pose_range: f64,
        #[arg(long, default_value_t = 1.0)]
        shape_range: f64,
        #[arg(long)]
        out: PathBuf,
        /// Write population A to --out and population B to --out-b.
        #[arg(long, requires = "out_b")]
        populations: bool,
        #[arg(long)]
        out_b: Option<PathBuf>,
    },
    /// Train correctives, activations and skinning weights.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Prune the trained model at this activation threshold before saving.
        #[arg(long)]
        prune: Option<f64>,
    },
    /// Fit pose and shape to a target mesh.
    Fit {
        #[arg(long)]
        model: PathBuf,
        /// OBJ mesh, or a registrations container (see --index).
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        shape_coeffs: Option<usize>,
        /// Initial pose (JSON array or object with "theta"); rest pose if omitted.
        #[arg(long)]
        init_pose: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        max_iterations: usize,
        #[arg(long, value_enum, default_value_t = Metric::PerCoordinate)]
        metric: Metric,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pose the model and write an OBJ.
    Pose {
        #[arg(long)]
        model: PathBuf,
        /// JSON array or object with "theta"; rest pose if omitted.
        #[arg(long)]
        pose: Option<PathBuf>,
        /// JSON array or object with "beta"; zero if omitted.
        #[arg(long)]
        beta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report non-zero corrective parameters and support sizes.
    AnalyzeSparsity {
        #[arg(long)]
        model: PathBuf,
    },
    /// Explained-variance curve of a dataset under a PCA basis.
    ExplainedVariance {
        /// PCA basis container, or a shape dataset to fit the basis on.
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Largest component count on the curve; all basis components if omitted.
        #[arg(long)]
        max_k: Option<usize>,
        /// Also save the fitted basis when --basis is a dataset.
        #[arg(long)]
        basis_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every model invariant.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    PerCoordinate,
    PerVertex,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Reports go to `out`, errors to stderr.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &StarError) -> i32 {
    match e {
        StarError::Numerical { .. } => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::SynthModel {
            config,
            out: path,
            seed,
            mesh_out,
            blank,
        } => {
            let mut cfg = match config {
                Some(p) => SynthConfig::load(p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (mut model, mesh) = make_body(&cfg)?;
            if blank {
                model = blank_model(&model)?;
            }
            save_model(&model, &path)?;
            if let Some(m) = mesh_out {
                crate::meshcore::save_obj(&mesh, m)?;
            }
        }
        Command::SynthData {
            model,
            count,
            noise,
            seed,
            pose_range,
            shape_range,
            out: path,
            populations,
            out_b,
        } => {
            let model = load_model(model)?;
            if populations {
                let cfg = PopulationConfig {
                    count_a: count,
                    count_b: count,
                    seed,
                    ..PopulationConfig::default()
                };
                let (a, b) = make_shape_populations(&model, &cfg)?;
                a.save(&path)?;
                b.save(out_b.expect("clap enforces --out-b"))?;
            } else {
                let spec = SampleSpec {
                    count,
                    pose_range,
                    shape_range,
                    noise,
                    seed,
                };
                sample_registrations(&model, &spec)?.save(&path)?;
            }
        }
        Command::Train {
            model,
            data,
            config,
            out: path,
            metrics,
            prune: threshold,
        } => {
            let model = load_model(model)?;
            let data = Dataset::load(data)?;
            let cfg = match config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            let outcome = train(&model, &data, &cfg)?;
            let trained = match threshold {
                Some(t) => prune(&outcome.model, t)?,
                None => outcome.model,
            };
            save_model(&trained, &path)?;
            if let Some(m) = metrics {
                save_metrics(m, &outcome.metrics)?;
            }
            if let Some(last) = outcome.metrics.last() {
                writeln_out(out, format_args!("final v2v {:.6}", last.v2v))?;
            }
        }
        Command::Fit {
            model,
            target,
            index,
            shape_coeffs,
            init_pose,
            max_iterations,
            metric,
            out: path,
        } => {
            let model = load_model(model)?;
            let target = load_target(&target, index)?;
            let pose = match init_pose {
                Some(p) => read_vector(&p, "theta")?,
                None => model.tree().rest_pose(),
            };
            let opts = FitOptions {
                max_iterations,
                shape_coeffs,
                metric: match metric {
                    Metric::PerCoordinate => V2vMetric::PerCoordinate,
                    Metric::PerVertex => V2vMetric::PerVertex,
                },
                ..FitOptions::default()
            };
            let result = fit(&model, &target, &pose, &[], &opts)?;
            result.save(&path)?;
            writeln_out(
                out,
                format_args!(
                    "v2v {:.6} iterations {} converged {}",
                    result.v2v_error, result.iterations, result.converged
                ),
            )?;
        }
        Command::Pose {
            model,
            pose,
            beta,
            out: path,
        } => {
            let model = load_model(model)?;
            let theta = match pose {
                Some(p) => read_vector(&p, "theta")?,
                None => model.tree().rest_pose(),
            };
            let beta = match beta {
                Some(p) => read_vector(&p, "beta")?,
                None => Vec::new(),
            };
            crate::meshcore::save_obj(&model.forward(&beta, &theta)?, path)?;
        }
        Command::AnalyzeSparsity { model } => {
            let model = load_model(model)?;
            let count = model.count_nonzero_params();
            writeln_out(out, format_args!("nonzero {}", count.nonzero))?;
            writeln_out(out, format_args!("dense {}", count.dense))?;
            writeln_out(out, format_args!("ratio {:.6}", count.ratio()))?;
            for j in 1..model.num_joints() {
                let name = &model.tree().names()[j];
                let size = model.support_set(j)?.len();
                writeln_out(out, format_args!("joint {j} {name} support {size}"))?;
            }
        }
        Command::ExplainedVariance {
            basis,
            data,
            max_k,
            basis_out,
            out: path,
        } => {
            let data = ShapeDataset::load(data)?;
            let text = read_text(&basis)?;
            let basis = match peek_header(&text)?.kind.as_str() {
                crate::fit::PCA_BASIS_KIND => PcaBasis::from_json(&text)?,
                crate::fit::SHAPE_DATASET_KIND => {
                    let source = ShapeDataset::from_json(&text)?;
                    let k = max_k.unwrap_or_else(|| max_rank(&source));
                    pca_fit(&source, k)?
                }
                other => {
                    return Err(StarError::Format(format!(
                        "{} holds a {other:?} container, expected a basis or shape dataset",
                        basis.display()
                    )))
                }
            };
            if let Some(p) = basis_out {
                basis.save(p)?;
            }
            let k = max_k.unwrap_or(basis.num_components());
            let curve = explained_variance_curve(&basis, &data, k)?;
            let file = std::fs::File::create(&path).map_err(|e| StarError::io(&path, e))?;
            write_curve_csv(file, &curve)?;
        }
        Command::Validate { model } => {
            let checks = audit_model_json(&read_text(&model)?)?;
            let mut ok = true;
            for c in &checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                if c.detail.is_empty() {
                    writeln_out(out, format_args!("{tag} {}", c.name))?;
                } else {
                    writeln_out(out, format_args!("{tag} {}: {}", c.name, c.detail))?;
                }
                ok &= c.passed;
            }
            return Ok(if ok { EXIT_OK } else { EXIT_DATA });
        }
    }
    Ok(EXIT_OK)
}

fn writeln_out(out: &mut dyn Write, args: std::fmt::Arguments) -> Result<()> {
    writeln!(out, "{args}").map_err(|e| StarError::io("<stdout>", e))
}

fn blank_model(model: &BodyModel) -> Result<BodyModel> {
    let mut blank = model.with_zero_correctives();
    for j in 1..blank.num_joints() {
        blank.set_activations(j, vec![1.0; blank.num_vertices()])?;
    }
    Ok(blank)
}

/// Largest component count PCA can return for `data`, ignoring rank.
fn max_rank(data: &ShapeDataset) -> usize {
    let mut k = (data.num_subjects() - 1).min(data.dim());
    while k > 0 && pca_fit(data, k).is_err() {
        k -= 1;
    }
    k
}

fn load_target(path: &Path, index: usize) -> Result<Vec<f64>> {
    let is_obj = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj"));
    if is_obj {
        return Ok(load_obj(path)?.to_flat());
    }
    let data = Dataset::load(path)?;
    data.registrations()
        .get(index)
        .map(|r| r.vertices().to_vec())
        .ok_or_else(|| {
            StarError::invalid(format!(
                "registration index {index} out of range for {} registrations",
                data.len()
            ))
        })
}

/// Reads a number array from a JSON file holding either the array itself
/// or an object with the array under `key`.
fn read_vector(path: &Path, key: &str) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| StarError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let array = match &value {
        Value::Array(_) => &value,
        Value::Object(map) => map.get(key).ok_or_else(|| {
            StarError::Format(format!("{} has no {key:?} field", path.display()))
        })?,
        _ => {
            return Err(StarError::Format(format!(
                "{} must hold an array or an object",
                path.display()
            )))
        }
    };
    serde_json::from_value(array.clone())
        .map_err(|e| StarError::Format(format!("{}: {e}", path.display())))
}
