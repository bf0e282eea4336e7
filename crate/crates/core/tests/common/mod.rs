//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use star_core::meshcore::KinematicTree;
use star_core::model::{relu, BodyModelParts, Corrective, CorrectiveRows};
use star_core::quat::Quaternion;
use star_core::BodyModel;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random axis-angle vector with norm below `max_angle`.
pub fn random_axis_angle(rng: &mut ChaCha8Rng, max_angle: f64) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n = norm3(v);
        if n > 1e-3 && n <= 1.0 {
            let a = rng.random_range(0.0..max_angle);
            return [v[0] / n * a, v[1] / n * a, v[2] / n * a];
        }
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng, joints: usize, max_angle: f64) -> Vec<f64> {
    (0..joints).flat_map(|_| random_axis_angle(rng, max_angle)).collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, range: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-range..range)).collect()
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Rotation matrix from axis-angle by Rodrigues' formula.
pub fn rodrigues(v: [f64; 3]) -> [[f64; 3]; 3] {
    let a = norm3(v);
    if a == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [v[0] / a, v[1] / a, v[2] / a];
    let (s, c) = a.sin_cos();
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            r[i][j] = c * id + (1.0 - c) * k[i] * k[j];
        }
    }
    r[0][1] -= s * k[2];
    r[0][2] += s * k[1];
    r[1][0] += s * k[2];
    r[1][2] -= s * k[0];
    r[2][0] -= s * k[1];
    r[2][1] += s * k[0];
    r
}

pub fn mat_vec(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Unit quaternion (w, x, y, z) of an axis-angle vector with w >= 0.
pub fn naive_quaternion(v: [f64; 3]) -> [f64; 4] {
    let a = norm3(v);
    if a == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let (s, c) = (a / 2.0).sin_cos();
    let q = [c, s * v[0] / a, s * v[1] / a, s * v[2] / a];
    if q[0] < 0.0 {
        q.map(|x| -x)
    } else {
        q
    }
}

/// Pose feature of joint `j`: quaternion differences of the joint, its
/// parent and its children (in that order), then `beta2`.
pub fn naive_feature(model: &BodyModel, pose: &[f64], j: usize, beta2: f64) -> Vec<f64> {
    let tree = model.tree();
    let mut members = vec![j];
    members.extend(tree.parent(j));
    members.extend((0..tree.num_joints()).filter(|&c| tree.parent(c) == Some(j)));
    let mut f = Vec::new();
    for m in members {
        let q = naive_quaternion([pose[3 * m], pose[3 * m + 1], pose[3 * m + 2]]);
        let r = tree.rest_quaternions()[m].to_array();
        f.extend((0..4).map(|c| q[c] - r[c]));
    }
    f.push(beta2);
    f
}

/// Sum of pose correctives computed as one dense `3N x ΣF` matrix, with
/// activation masks folded into its rows, times the stacked features.
pub fn dense_corrective_oracle(model: &BodyModel, pose: &[f64], beta2: f64) -> Vec<f64> {
    let n = model.num_vertices();
    let features: Vec<Vec<f64>> = (1..model.num_joints())
        .map(|j| naive_feature(model, pose, j, beta2))
        .collect();
    let total: usize = features.iter().map(Vec::len).sum();
    let mut dense = vec![vec![0.0; total]; 3 * n];
    let mut offset = 0;
    for (idx, c) in model.correctives().iter().enumerate() {
        let f = features[idx].len();
        for (slot, &v) in c.rows.vertices().iter().enumerate() {
            let mask = relu(c.activations[v]);
            let block = c.rows.block(slot);
            for d in 0..3 {
                for col in 0..f {
                    dense[3 * v + d][offset + col] = mask * block[d * f + col];
                }
            }
        }
        offset += f;
    }
    let stacked: Vec<f64> = features.concat();
    dense
        .iter()
        .map(|row| row.iter().zip(&stacked).map(|(a, b)| a * b).sum())
        .collect()
}

/// Copy with dense random regressors (entries in `±scale`) and random
/// activations, a quarter of them negative.
pub fn randomize_correctives(model: &BodyModel, rng: &mut ChaCha8Rng, scale: f64) -> BodyModel {
    let mut out = model.clone();
    let n = model.num_vertices();
    for j in 1..model.num_joints() {
        let f = model.corrective(j).unwrap().rows.feature_len();
        let weights = random_vec(rng, n * 3 * f, scale);
        let rows = CorrectiveRows::new(f, (0..n).collect(), weights).unwrap();
        out.set_corrective_rows(j, rows).unwrap();
        let acts = (0..n)
            .map(|_| {
                let w: f64 = rng.random_range(0.05..1.0);
                if rng.random_bool(0.25) {
                    -w
                } else {
                    w
                }
            })
            .collect();
        out.set_activations(j, acts).unwrap();
    }
    out
}

/// Copy whose kinematic tree has random rest orientations.
pub fn with_random_rest(model: &BodyModel, rng: &mut ChaCha8Rng) -> BodyModel {
    let tree = model.tree();
    let rest = (0..tree.num_joints())
        .map(|_| {
            let q = naive_quaternion(random_axis_angle(rng, 2.5));
            Quaternion::new(q[0], q[1], q[2], q[3])
        })
        .collect();
    let tree = KinematicTree::new(tree.parents().to_vec(), tree.names().to_vec(), rest).unwrap();
    BodyModel::new(BodyModelParts {
        template: model.template().to_vec(),
        faces: model.faces().to_vec(),
        shape_dirs: model.shape_dirs().clone(),
        joint_regressor: model.joint_regressor().clone(),
        skinning_weights: model.skinning_weights().clone(),
        correctives: model.correctives().to_vec(),
        tree,
        beta2_index: model.beta2_index(),
    })
    .unwrap()
}

pub fn corrective_of(model: &BodyModel, j: usize) -> &Corrective {
    model.corrective(j).unwrap()
}

pub fn iou(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `max |a - n| / max(max |n|, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = numeric.iter().map(|x| x.abs()).fold(floor, f64::max);
    max_abs_diff(analytic, numeric) / scale
}

/// Per-block relative errors (regressor rows, activations, skinning) of
/// `total_loss`'s gradient against central differences with step `h`.
pub fn loss_gradient_errors(
    model: &BodyModel,
    batch: &[star_core::train::Registration],
    lambdas: &star_core::train::Lambdas,
    prior: &nalgebra::DMatrix<f64>,
    h: f64,
) -> [f64; 3] {
    use star_core::train::total_loss;
    let (_, grads) = total_loss(model, batch, lambdas, prior).unwrap();
    let value = |m: &BodyModel| total_loss(m, batch, lambdas, prior).unwrap().0.total();
    let central = |plus: BodyModel, minus: BodyModel| (value(&plus) - value(&minus)) / (2.0 * h);

    let mut rows_a = Vec::new();
    let mut rows_n = Vec::new();
    let mut acts_a = Vec::new();
    let mut acts_n = Vec::new();
    for j in 1..model.num_joints() {
        let c = model.corrective(j).unwrap();
        let f = c.rows.feature_len();
        for p in 0..c.rows.weights().len() {
            let shifted = |delta: f64| {
                let mut w = c.rows.weights().to_vec();
                w[p] += delta;
                let mut m = model.clone();
                m.set_corrective_rows(j, CorrectiveRows::new(f, c.rows.vertices().to_vec(), w).unwrap())
                    .unwrap();
                m
            };
            rows_n.push(central(shifted(h), shifted(-h)));
            rows_a.push(grads.rows[j - 1][p]);
        }
        for i in 0..c.activations.len() {
            let shifted = |delta: f64| {
                let mut a = c.activations.clone();
                a[i] += delta;
                let mut m = model.clone();
                m.set_activations(j, a).unwrap();
                m
            };
            acts_n.push(central(shifted(h), shifted(-h)));
            acts_a.push(grads.activations[j - 1][i]);
        }
    }
    let mut skin_a = Vec::new();
    let mut skin_n = Vec::new();
    let w = model.skinning_weights();
    for idx in 0..w.len() {
        let shifted = |delta: f64| {
            let mut w = w.clone();
            w[idx] += delta;
            let mut m = model.clone();
            m.set_skinning_weights(w).unwrap();
            m
        };
        skin_n.push(central(shifted(h), shifted(-h)));
        skin_a.push(grads.skinning[idx]);
    }
    [
        relative_error(&rows_a, &rows_n, 1e-8),
        relative_error(&acts_a, &acts_n, 1e-8),
        relative_error(&skin_a, &skin_n, 1e-8),
    ]
}

/// Registrations of `source` usable as a batch for a model with the same
/// dimensions.
pub fn registrations_from(
    source: &BodyModel,
    rng: &mut ChaCha8Rng,
    count: usize,
    max_angle: f64,
) -> Vec<star_core::train::Registration> {
    (0..count)
        .map(|_| {
            let pose = random_pose(rng, source.num_joints(), max_angle);
            let shape = random_vec(rng, source.num_betas(), 1.0);
            let v = source.forward_vertices(&shape, &pose).unwrap();
            star_core::train::Registration::new(v, pose, shape).unwrap()
        })
        .collect()
}

/// A random row-stochastic matrix with strictly positive entries.
pub fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> nalgebra::DMatrix<f64> {
    let mut m = nalgebra::DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.1..1.0));
    for mut r in m.row_iter_mut() {
        let s = r.sum();
        r /= s;
    }
    m
}
