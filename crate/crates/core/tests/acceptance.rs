//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use star_core::fit::{explained_variance, fit, pca_fit, FitOptions};
use star_core::model::model_to_json;
use star_core::synth::{
    ground_truth_supports, make_body, make_shape_populations, sample_registrations, tiny_model,
    PopulationConfig, SampleSpec, SynthConfig,
};
use star_core::train::{prune, train, Lambdas, TrainConfig};
use star_core::BodyModel;

const REFERENCE_TRAIN: &str = include_str!("../configs/reference-train.toml");

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(
        elapsed < limit,
        format!("{detail}, {:.2}s (limit {:.0}s)", elapsed.as_secs_f64(), limit.as_secs_f64()),
    )
}

fn random_body(r: &mut rand_chacha::ChaCha8Rng) -> BodyModel {
    let cfg = SynthConfig {
        joints: r.random_range(2..=8),
        rings_per_segment: r.random_range(2..=6),
        ring_resolution: r.random_range(6..=12),
        seed: r.random(),
        ..SynthConfig::default()
    };
    let base = make_body(&cfg).unwrap().0;
    with_random_rest(&randomize_correctives(&base, r, 1e-2), r)
}

fn rest_identity() -> Outcome {
    let mut r = rng(101);
    let models: Vec<BodyModel> = (0..20).map(|_| random_body(&mut r)).collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for m in &models {
        let out = m.forward_vertices(&[], &m.tree().rest_pose()).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&out, m.template()));
    }
    let elapsed = start.elapsed();
    if worst >= 1e-9 {
        return Err(format!("max deviation {worst:.2e}"));
    }
    within(elapsed, Duration::from_secs(1), format!("max deviation {worst:.2e} over 20 models"))
}

fn mask_exactness() -> Outcome {
    let mut r = rng(102);
    let (gt, _) = make_body(&SynthConfig::default()).unwrap();
    let mut m = randomize_correctives(&gt, &mut r, 1e-2);
    for j in 1..gt.num_joints() {
        m.set_activations(j, gt.corrective(j).unwrap().activations.clone()).unwrap();
    }
    let supports = ground_truth_supports(&m);
    let n = m.num_vertices();
    let mut outside = vec![true; n];
    for s in &supports {
        for &v in s {
            outside[v] = false;
        }
    }
    let start = Instant::now();
    let mut checked = 0usize;
    for _ in 0..1000 {
        let pose = random_pose(&mut r, m.num_joints(), 3.0);
        let beta2 = r.random_range(-3.0..3.0);
        for j in 1..m.num_joints() {
            let c = m.pose_corrective_joint(&pose, beta2, j).unwrap();
            let mut inside = vec![false; n];
            for &v in &supports[j] {
                inside[v] = true;
            }
            for i in (0..n).filter(|&i| !inside[i]) {
                for d in 0..3 {
                    if c[3 * i + d].to_bits() != 0 {
                        return Err(format!("joint {j} vertex {i} got {:e}", c[3 * i + d]));
                    }
                    checked += 1;
                }
            }
        }
        let total = m.pose_correctives(&pose, beta2).unwrap();
        for i in (0..n).filter(|&i| outside[i]) {
            for d in 0..3 {
                if total[3 * i + d].to_bits() != 0 {
                    return Err(format!("summed corrective at vertex {i} is non-zero"));
                }
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(10), format!("{checked} masked coordinates all +0.0"))
}

fn dense_equivalence() -> Outcome {
    let mut r = rng(103);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = random_body(&mut r);
        if m.num_vertices() > 600 {
            return Err(format!("model with {} vertices", m.num_vertices()));
        }
        let pose = random_pose(&mut r, m.num_joints(), 3.0);
        let beta2 = r.random_range(-2.0..2.0);
        let fast = m.pose_correctives(&pose, beta2).unwrap();
        worst = worst.max(max_abs_diff(&fast, &dense_corrective_oracle(&m, &pose, beta2)));
    }
    check(worst < 1e-10, format!("max abs diff {worst:.2e} over 100 draws"))
}

fn gradient_suite() -> Outcome {
    let mut r = rng(104);
    let h = 1e-6;
    let (mut worst_fwd, mut worst_loss) = (0.0f64, 0.0f64);
    let mut skipped = 0;
    let mut run = 0;
    let mut seed = 0u64;
    while run < 100 {
        seed += 1;
        let m = tiny_model(seed);
        let min_act = m
            .correctives()
            .iter()
            .flat_map(|c| c.activations.iter())
            .fold(f64::INFINITY, |a, w| a.min(w.abs()));
        let min_skin = m.skinning_weights().iter().fold(f64::INFINITY, |a, w| a.min(w.abs()));
        if min_act < 1e3 * h || min_skin < 1e3 * h {
            skipped += 1;
            continue;
        }
        run += 1;

        let beta = random_vec(&mut r, m.num_betas(), 1.0);
        let pose = random_pose(&mut r, m.num_joints(), 2.0);
        let jac = m.forward_jacobian(&beta, &pose).unwrap();
        let fd = |perturb: &dyn Fn(f64) -> Vec<f64>| -> Vec<f64> {
            let (p, q) = (perturb(h), perturb(-h));
            p.iter().zip(&q).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        };
        for c in 0..pose.len() {
            let numeric = fd(&|d| {
                let mut p = pose.clone();
                p[c] += d;
                m.forward_vertices(&beta, &p).unwrap()
            });
            let analytic: Vec<f64> = jac.pose.column(c).iter().copied().collect();
            worst_fwd = worst_fwd.max(relative_error(&analytic, &numeric, 1e-8));
        }
        for c in 0..beta.len() {
            let numeric = fd(&|d| {
                let mut b = beta.clone();
                b[c] += d;
                m.forward_vertices(&b, &pose).unwrap()
            });
            let analytic: Vec<f64> = jac.shape.column(c).iter().copied().collect();
            worst_fwd = worst_fwd.max(relative_error(&analytic, &numeric, 1e-8));
        }

        let batch = registrations_from(&tiny_model(seed + 10_000), &mut r, 3, 1.5);
        let prior = random_stochastic(&mut r, m.num_vertices(), m.num_joints());
        let lambdas = Lambdas {
            blend: r.random_range(0.0..0.1),
            activation: r.random_range(0.0..0.1),
            prior: r.random_range(0.0..0.1),
            sparsity: r.random_range(0.0..0.1),
        };
        for e in loss_gradient_errors(&m, &batch, &lambdas, &prior, h) {
            worst_loss = worst_loss.max(e);
        }
    }
    check(
        worst_fwd < 1e-4 && worst_loss < 1e-4,
        format!(
            "forward {worst_fwd:.2e}, loss {worst_loss:.2e} over 100 configurations ({skipped} near kinks skipped)"
        ),
    )
}

fn rigidity() -> Outcome {
    let mut r = rng(105);
    let m = make_body(&SynthConfig::default()).unwrap().0.with_zero_correctives();
    let k = m.num_joints();
    let (mut worst_rigid, mut worst_limb) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let beta = random_vec(&mut r, m.num_betas(), 1.0);
        let pose = random_pose(&mut r, k, 2.0);
        let posed = m.forward_vertices(&beta, &pose).unwrap();

        // Pre-composing a global rotation on the root moves the body rigidly
        // about the root joint.
        let g = Rotation3::new(Vector3::from(random_axis_angle(&mut r, 3.0)));
        let root = Rotation3::new(Vector3::new(pose[0], pose[1], pose[2]));
        let mut turned = pose.clone();
        turned[..3].copy_from_slice((g * root).scaled_axis().as_slice());
        let moved = m.forward_vertices(&beta, &turned).unwrap();
        let joints = m.posed_joints(&beta, &pose).unwrap();
        let c = Vector3::new(joints[0], joints[1], joints[2]);
        for i in 0..m.num_vertices() {
            let v = Vector3::new(posed[3 * i], posed[3 * i + 1], posed[3 * i + 2]);
            let expect = g * (v - c) + c;
            for d in 0..3 {
                worst_rigid = worst_rigid.max((moved[3 * i + d] - expect[d]).abs());
            }
        }

        let rest = m.regress_joints(&m.shaped_vertices(&beta).unwrap()).unwrap();
        let dist = |p: &[f64], a: usize, b: usize| {
            ((0..3).map(|d| (p[3 * a + d] - p[3 * b + d]).powi(2)).sum::<f64>()).sqrt()
        };
        for j in 1..k {
            let parent = m.tree().parents()[j].unwrap();
            worst_limb = worst_limb.max((dist(&joints, j, parent) - dist(&rest, j, parent)).abs());
        }
    }
    check(
        worst_rigid < 1e-9 && worst_limb < 1e-9,
        format!("rigidity {worst_rigid:.2e}, limb length {worst_limb:.2e} over 100 poses"),
    )
}

struct Reference {
    gt: BodyModel,
    trained: BodyModel,
    synth: SynthConfig,
}

fn train_reference() -> Result<(Reference, Duration), String> {
    let synth = SynthConfig::default();
    let (gt, _) = make_body(&synth).map_err(|e| e.to_string())?;
    let data = sample_registrations(&gt, &SampleSpec::from_config(&synth, 200)).map_err(|e| e.to_string())?;
    let cfg: TrainConfig = toml::from_str(REFERENCE_TRAIN).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = train(&gt, &data, &cfg).map_err(|e| e.to_string())?;
    Ok((Reference { gt, trained: out.model, synth }, start.elapsed()))
}

fn sparsity(reference: &Result<(Reference, Duration), String>) -> Outcome {
    let (r, elapsed) = reference.as_ref().map_err(|e| format!("training failed: {e}"))?;
    let ratio = r.trained.count_nonzero_params().ratio();
    let truth = ground_truth_supports(&r.gt);
    let ious: Vec<f64> = (1..r.gt.num_joints())
        .map(|j| iou(&r.trained.support_set(j).unwrap(), &truth[j]))
        .collect();
    let mean_iou = ious.iter().sum::<f64>() / ious.len() as f64;
    if !(ratio < 0.4 && mean_iou > 0.7) {
        return Err(format!("ratio {ratio:.4}, support IoU {mean_iou:.3}"));
    }
    within(*elapsed, Duration::from_secs(600), format!("ratio {ratio:.4}, support IoU {mean_iou:.3}"))
}

fn fit_recovery() -> Outcome {
    let m = make_body(&SynthConfig::default()).unwrap().0;
    let threshold = 1e-3 * m.template_mesh().bbox_diagonal();
    let mut r = rng(107);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut passed = 0;
    let mut worst_iterations = 0;
    for _ in 0..50 {
        let pose = random_pose(&mut r, m.num_joints(), 0.5);
        let beta = random_vec(&mut r, m.num_betas(), 1.0);
        let target = m.forward_vertices(&beta, &pose).unwrap();
        let init: Vec<f64> = pose.iter().map(|p| p + noise.sample(&mut r)).collect();
        let res = fit(&m, &target, &init, &[], &FitOptions::default()).map_err(|e| e.to_string())?;
        worst_iterations = worst_iterations.max(res.iterations);
        // Reported v2v is in thousandths of a model unit.
        if res.v2v_error / 1000.0 < threshold && res.iterations <= 500 {
            passed += 1;
        }
    }
    check(
        passed >= 45,
        format!("{passed}/50 trials below {threshold:.2e}, at most {worst_iterations} iterations"),
    )
}

fn shape_monotonicity(reference: &Result<(Reference, Duration), String>) -> Outcome {
    let (r, _) = reference.as_ref().map_err(|e| format!("training failed: {e}"))?;
    let spec = SampleSpec {
        count: 10,
        noise: 0.001,
        seed: 4242,
        ..SampleSpec::from_config(&r.synth, 10)
    };
    let held = sample_registrations(&r.gt, &spec).map_err(|e| e.to_string())?;
    let rest = r.trained.tree().rest_pose();
    let mut means = Vec::new();
    for c in [1usize, 2, 4, 8] {
        let opts = FitOptions {
            shape_coeffs: Some(c),
            ..FitOptions::default()
        };
        let mut total = 0.0;
        for reg in held.registrations() {
            total += fit(&r.trained, reg.vertices(), &rest, &[], &opts)
                .map_err(|e| e.to_string())?
                .v2v_error;
        }
        means.push(total / held.len() as f64);
    }
    let ok = means.windows(2).all(|w| w[1] <= 1.02 * w[0]);
    let listed: Vec<String> = means.iter().map(|v| format!("{v:.4}")).collect();
    check(ok, format!("mean v2v for c = 1, 2, 4, 8: {}", listed.join(", ")))
}

fn variance_asymmetry() -> Outcome {
    let m = make_body(&SynthConfig::default()).unwrap().0;
    let (a, b) = make_shape_populations(&m, &PopulationConfig::default()).map_err(|e| e.to_string())?;
    let pa = pca_fit(&a, 4).map_err(|e| e.to_string())?;
    let pb = pca_fit(&b, 4).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for (own_data, own, other, label) in [(&a, &pa, &pb, "A"), (&b, &pb, &pa, "B")] {
        let mut shared = other.clone();
        shared.mean = own.mean.clone();
        for k in 1..=4 {
            let e_own = explained_variance(own, own_data, k).unwrap();
            let e_cross = explained_variance(other, own_data, k).unwrap();
            let e_shared = explained_variance(&shared, own_data, k).unwrap();
            ok &= e_own > e_cross && e_own >= e_shared - 1e-9;
            if k == 1 || k == 4 {
                lines.push(format!("{label} k={k} own {e_own:.1}% cross {e_cross:.1}%"));
            }
        }
    }
    check(ok, lines.join("; "))
}

fn pruning_neutrality(reference: &Result<(Reference, Duration), String>) -> Outcome {
    let (r, _) = reference.as_ref().map_err(|e| format!("training failed: {e}"))?;
    let pruned = prune(&r.trained, 0.0).map_err(|e| e.to_string())?;
    let mut rng = rng(110);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let beta = random_vec(&mut rng, r.trained.num_betas(), 1.0);
        let pose = random_pose(&mut rng, r.trained.num_joints(), 1.5);
        let before = r.trained.forward_vertices(&beta, &pose).unwrap();
        let after = pruned.forward_vertices(&beta, &pose).unwrap();
        worst = worst.max(max_abs_diff(&before, &after));
    }
    let (before, after) = (model_to_json(&r.trained).len(), model_to_json(&pruned).len());
    check(
        worst == 0.0 && after < before,
        format!("max abs diff {worst:e}, serialized {before} -> {after} bytes"),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    };
    report(1, "rest identity", rest_identity());
    report(2, "mask exactness", mask_exactness());
    report(3, "dense equivalence", dense_equivalence());
    report(4, "gradient suite", gradient_suite());
    report(5, "rigidity and limb length", rigidity());
    let reference = train_reference();
    report(6, "sparsity emergence", sparsity(&reference));
    report(7, "fit recovery", fit_recovery());
    report(8, "shape-coefficient monotonicity", shape_monotonicity(&reference));
    report(9, "explained-variance asymmetry", variance_asymmetry());
    report(10, "pruning neutrality", pruning_neutrality(&reference));
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
