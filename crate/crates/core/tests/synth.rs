mod common;

use std::collections::{BTreeSet, VecDeque};

use common::*;
use star_core::fit::{explained_variance, pca_fit};
use star_core::meshcore::geodesic_distances;
use star_core::synth::{
    ground_truth_supports, joint_ring, make_body, make_shape_populations, sample_registrations,
    tiny_model, PopulationConfig, SampleSpec, SynthConfig,
};
use star_core::train::loss_data;
use star_core::StarError;

#[test]
fn two_joints_one_segment() {
    let cfg = SynthConfig {
        joints: 2,
        rings_per_segment: 1,
        ..SynthConfig::default()
    };
    let (m, _) = make_body(&cfg).unwrap();
    let w = m.skinning_weights();
    assert_eq!(w.ncols(), 2);
    for i in 0..w.nrows() {
        assert!((w.row(i).sum() - 1.0).abs() < 1e-12);
        assert!(w.row(i).iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn supports_respect_the_geodesic_radius_and_are_connected() {
    let cfg = SynthConfig::default();
    let (m, mesh) = make_body(&cfg).unwrap();
    let radius = cfg.support_radius * cfg.segment_length;
    let supports = ground_truth_supports(&m);
    let edges = mesh.edges();
    for j in 1..m.num_joints() {
        let d = geodesic_distances(&mesh, &joint_ring(&cfg, j)).unwrap();
        let support: BTreeSet<usize> = supports[j].iter().copied().collect();
        for i in 0..m.num_vertices() {
            assert_eq!(support.contains(&i), d[i] < radius, "joint {j} vertex {i}");
        }
        assert!(!support.is_empty());
        let start = *support.iter().next().unwrap();
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &(a, b) in &edges {
                let next = if a == v { b } else if b == v { a } else { continue };
                if support.contains(&next) && seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        assert_eq!(seen, support);
        for (i, a) in m.corrective(j).unwrap().activations.iter().enumerate() {
            if !support.contains(&i) {
                assert!(*a <= 0.0);
            }
        }
    }
}

#[test]
fn generated_model_rests_at_template() {
    let (m, mesh) = make_body(&SynthConfig::default()).unwrap();
    let rest = m.forward_vertices(&[], &m.tree().rest_pose()).unwrap();
    assert!(max_abs_diff(&rest, m.template()) < 1e-12);
    assert_eq!(mesh.to_flat(), m.template());
    assert!(m.validate().iter().all(|c| c.passed));
    assert_eq!(m.num_vertices(), SynthConfig::default().num_vertices());
}

#[test]
fn generation_is_deterministic() {
    let cfg = SynthConfig::default();
    assert_eq!(make_body(&cfg).unwrap().0, make_body(&cfg).unwrap().0);
    let other = make_body(&SynthConfig { seed: 1, ..cfg.clone() }).unwrap().0;
    assert_ne!(other, make_body(&cfg).unwrap().0);
    let (m, _) = make_body(&cfg).unwrap();
    let spec = SampleSpec {
        count: 4,
        pose_range: 0.5,
        shape_range: 1.0,
        noise: 0.01,
        seed: 3,
    };
    let a = sample_registrations(&m, &spec).unwrap();
    let b = sample_registrations(&m, &spec).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn noiseless_registrations_have_zero_data_loss() {
    let cfg = SynthConfig::default();
    let (m, _) = make_body(&cfg).unwrap();
    let data = sample_registrations(&m, &SampleSpec::from_config(&cfg, 6)).unwrap();
    assert_eq!(loss_data(&m, data.registrations()).unwrap(), 0.0);
    for r in data.registrations() {
        assert!(r.pose().iter().all(|p| p.abs() <= cfg.pose_range));
        assert!(r.shape().iter().all(|b| b.abs() <= cfg.shape_range));
    }
}

#[test]
fn noise_level_matches_rms_residual() {
    let (m, _) = make_body(&SynthConfig::default()).unwrap();
    let s = 0.002;
    let spec = SampleSpec {
        count: 20,
        pose_range: 0.5,
        shape_range: 1.0,
        noise: s,
        seed: 8,
    };
    let data = sample_registrations(&m, &spec).unwrap();
    let mut sq = 0.0;
    let mut count = 0;
    for r in data.registrations() {
        let clean = m.forward_vertices(r.shape(), r.pose()).unwrap();
        for (a, b) in clean.iter().zip(r.vertices()) {
            sq += (a - b).powi(2);
            count += 1;
        }
    }
    let rms = (sq / count as f64).sqrt();
    assert!((rms - s).abs() < 0.1 * s, "rms {rms}");
}

#[test]
fn populations_with_disjoint_modes() {
    let (m, _) = make_body(&SynthConfig::default()).unwrap();
    let cfg = PopulationConfig::default();
    let (a, b) = make_shape_populations(&m, &cfg).unwrap();
    assert_eq!((a.num_subjects(), b.num_subjects()), (cfg.count_a, cfg.count_b));
    let basis_a = pca_fit(&a, 1).unwrap();
    assert!(explained_variance(&basis_a, &b, 1).unwrap() < 50.0);

    // Sample means against the construction mean (the template), measured
    // in shape-coefficient space.
    let (std_a, std_b) = cfg.stds(&m);
    let s = m.shape_dirs();
    let pinv = s.clone().pseudo_inverse(1e-12).unwrap();
    for (data, stds) in [(&a, &std_a), (&b, &std_b)] {
        let mean = data.mean();
        let t = nalgebra::DVector::from_column_slice(m.template());
        let coeffs = &pinv * (mean - t);
        let se: Vec<f64> = stds.iter().map(|x| x / (data.num_subjects() as f64).sqrt()).collect();
        for (c, e) in coeffs.iter().zip(&se) {
            assert!(c.abs() <= 3.0 * e, "{c} vs {e}");
        }
    }
}

#[test]
fn populations_with_identical_covariances() {
    let (m, _) = make_body(&SynthConfig::default()).unwrap();
    let cfg = PopulationConfig {
        dominant_a: vec![1],
        dominant_b: vec![1],
        ..PopulationConfig::default()
    };
    let (a, b) = make_shape_populations(&m, &cfg).unwrap();
    let pa = pca_fit(&a, 4).unwrap();
    let pb = pca_fit(&b, 4).unwrap();
    for k in 1..=4 {
        let own = explained_variance(&pa, &a, k).unwrap();
        let cross = explained_variance(&pb, &a, k).unwrap();
        assert!((own - cross).abs() < 2.0, "k {k}: {own} vs {cross}");
    }
}

#[test]
fn invalid_configs() {
    let base = SynthConfig::default();
    for cfg in [
        SynthConfig { joints: 1, ..base.clone() },
        SynthConfig { support_radius: 0.0, ..base.clone() },
        SynthConfig { support_radius: 1.5, ..base.clone() },
        SynthConfig { ring_resolution: 3, rings_per_segment: 1, joints: 20, ..base.clone() },
        SynthConfig { beta2_index: 10, ..base.clone() },
    ] {
        assert!(matches!(make_body(&cfg), Err(StarError::InvalidArgument(_))), "{cfg:?}");
    }
    let (m, _) = make_body(&base).unwrap();
    let bad = PopulationConfig {
        dominant_a: vec![99],
        ..PopulationConfig::default()
    };
    assert!(make_shape_populations(&m, &bad).is_err());
}

#[test]
fn tiny_model_shape() {
    let m = tiny_model(0);
    assert_eq!((m.num_vertices(), m.num_joints()), (12, 3));
    assert_eq!(m.tree().parents(), &[None, Some(0), Some(0)]);
    assert!(m.validate().iter().all(|c| c.passed));
    let _ = rng(0);
}
