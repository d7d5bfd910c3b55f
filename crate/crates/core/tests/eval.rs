use std::f64::consts::PI;

use netcoupler::coupling::CouplingMixture;
use netcoupler::eval::{
    auc, coverage_log_density, directed_outflow, edge_labels, gen_sparse_networks, off_diagonal,
    rank_uniformity, sample_off_diagonal, sbc_rank, sign_test_p, t_score, tscore_auc, BenchConfig,
};
use netcoupler::model::{KernelShape, Matrix, MdsModel, ModelConfig};
use netcoupler::rng::seeded;
use proptest::prelude::*;
use rand::Rng as _;

#[test]
fn off_diagonal_frequencies_match_the_configuration() {
    let cfg = BenchConfig::default();
    let mut rng = seeded(1);
    let n = 100_000;
    let (mut zero, mut pos, mut neg) = (0, 0, 0);
    for _ in 0..n {
        let v = sample_off_diagonal(&cfg, &mut rng);
        if v == 0.0 {
            zero += 1;
        } else if v == cfg.weight {
            pos += 1;
        } else {
            assert_eq!(v, -cfg.weight);
            neg += 1;
        }
    }
    let f = |k: usize| k as f64 / n as f64;
    assert!((f(zero) - 0.7).abs() < 0.01);
    assert!((f(pos) - 0.2).abs() < 0.01);
    assert!((f(neg) - 0.1).abs() < 0.01);
}

#[test]
fn suites_are_stable_and_reproducible() {
    let model = MdsModel::new(ModelConfig::new(4, 30, 8), KernelShape::default()).unwrap();
    let cfg = BenchConfig {
        networks: 12,
        subjects: 2,
        ..BenchConfig::default()
    };
    let a = gen_sparse_networks(&model, &cfg, 5).unwrap();
    let b = gen_sparse_networks(&model, &cfg, 5).unwrap();
    for (x, y) in a.networks.iter().zip(&b.networks) {
        assert!(x.coupling.spectral_radius() < 0.95);
        assert_eq!(x.coupling, y.coupling);
        for (s, t) in x.subjects.iter().zip(&y.subjects) {
            assert_eq!(s.signal.y, t.signal.y);
        }
        assert!(x.coupling.matrices[0].diagonal().iter().all(|d| *d == 0.5));
    }
    let c = gen_sparse_networks(&model, &cfg, 6).unwrap();
    assert_ne!(
        a.networks[0].subjects[0].signal.y,
        c.networks[0].subjects[0].signal.y
    );
}

#[test]
fn impossible_stability_is_a_config_error() {
    let model = MdsModel::new(ModelConfig::new(3, 30, 8), KernelShape::default()).unwrap();
    let cfg = BenchConfig {
        diagonal: 1.2,
        max_rejections: 5,
        ..BenchConfig::default()
    };
    assert!(gen_sparse_networks(&model, &cfg, 1).is_err());
}

#[test]
fn coverage_of_a_gaussian_at_its_mean_is_the_peak_density() {
    let means = vec![0.5, 0.1, -0.2, 0.5];
    let stds = vec![0.3, 0.2, 0.4, 0.1];
    let mix = CouplingMixture::new(1, 2, vec![means.clone()], vec![stds.clone()]).unwrap();
    let truth = Matrix::from_row_slice(2, 2, &means);
    let got = coverage_log_density(&mix, &[truth.clone()]).unwrap();
    let expected: f64 = [stds[1], stds[2]]
        .iter()
        .map(|s| -(s * (2.0 * PI).sqrt()).ln())
        .sum();
    assert!((got - expected).abs() < 1e-12);

    let twice = CouplingMixture::new(1, 2, vec![means.clone(); 2], vec![stds.clone(); 2]).unwrap();
    assert!((coverage_log_density(&twice, &[truth.clone()]).unwrap() - got).abs() < 1e-12);
    assert!(coverage_log_density(&mix, &[truth.clone(), truth]).is_err());
}

#[test]
fn coverage_ignores_component_order() {
    let a = vec![vec![0.1, 0.2, -0.3, 0.0], vec![-0.4, 0.3, 0.1, 0.2]];
    let s = vec![vec![0.2, 0.1, 0.3, 0.2], vec![0.1, 0.4, 0.2, 0.3]];
    let fwd = CouplingMixture::new(1, 2, a.clone(), s.clone()).unwrap();
    let rev = CouplingMixture::new(
        1,
        2,
        a.into_iter().rev().collect(),
        s.into_iter().rev().collect(),
    )
    .unwrap();
    let truth = Matrix::from_row_slice(2, 2, &[0.0, 0.15, -0.1, 0.0]);
    let x = coverage_log_density(&fwd, &[truth.clone()]).unwrap();
    let y = coverage_log_density(&rev, &[truth]).unwrap();
    assert!((x - y).abs() < 1e-12);
}

#[test]
fn separated_scores_give_unit_auc() {
    let scores = [0.1, 0.2, 0.3, 2.0, 3.0];
    let labels = [false, false, false, true, true];
    assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
    let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
    assert_eq!(auc(&scores, &flipped).unwrap(), 0.0);
    assert_eq!(auc(&[1.0, 1.0], &[true, false]).unwrap(), 0.5);
    assert!(auc(&scores, &[true; 5]).is_err());
}

#[test]
fn random_labels_give_chance_auc() {
    let mut rng = seeded(2);
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let value = auc(&scores, &labels).unwrap();
    assert!((value - 0.5).abs() < 0.02, "{value}");
}

#[test]
fn tscore_auc_scores_consistent_edges() {
    let labels = [true, false, true, false];
    let subjects = vec![
        vec![0.3, 0.05, -0.25, 0.0],
        vec![0.25, -0.04, -0.3, 0.02],
        vec![0.35, 0.02, -0.2, -0.01],
    ];
    let report = tscore_auc(&subjects, &labels).unwrap();
    // A negative edge scores low on a signed t statistic.
    assert!(report.scores[0] > 5.0 && report.scores[2] < -5.0);
    assert_eq!(report.roc.first(), Some(&(0.0, 0.0)));
    assert_eq!(report.roc.last(), Some(&(1.0, 1.0)));
    assert!(tscore_auc(&subjects[..1], &labels).is_err());
}

#[test]
fn t_score_of_constant_values() {
    assert_eq!(t_score(&[0.0, 0.0, 0.0]), 0.0);
    assert_eq!(t_score(&[0.2, 0.2]), f64::INFINITY);
    assert!((t_score(&[1.0, 2.0, 3.0]) - 2.0 / (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn outflow_examples() {
    let mut a = Matrix::zeros(2, 2);
    a[(1, 0)] = 0.2;
    assert_eq!(directed_outflow(&a).unwrap(), vec![0.2, -0.2]);
    let sym = Matrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 0.5, 0.7, -0.2, 0.7, 0.0]);
    assert!(directed_outflow(&sym)
        .unwrap()
        .iter()
        .all(|v| v.abs() < 1e-15));
    assert!(directed_outflow(&Matrix::zeros(2, 3)).is_err());
}

#[test]
fn outflow_sums_to_zero_on_random_matrices() {
    let mut rng = seeded(3);
    for _ in 0..1000 {
        let m = rng.random_range(2..8);
        let a = Matrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let total: f64 = directed_outflow(&a).unwrap().iter().sum();
        assert!(total.abs() < 1e-12);
    }
}

#[test]
fn edge_labels_follow_exact_zeros() {
    let a = Matrix::from_row_slice(3, 3, &[0.5, 0.0, 0.2, -0.2, 0.5, 0.0, 0.0, 0.0, 0.5]);
    assert_eq!(off_diagonal(&a), vec![0.0, 0.2, -0.2, 0.0, 0.0, 0.0]);
    assert_eq!(
        edge_labels(&a),
        vec![false, true, true, false, false, false]
    );
}

#[test]
fn sign_test_tail_probabilities() {
    assert_eq!(sign_test_p(0, 10), 1.0);
    assert!((sign_test_p(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
    assert!((sign_test_p(12, 15) - 576.0 / 32768.0).abs() < 1e-12);
}

#[test]
fn calibrated_ranks_pass_and_biased_ranks_fail() {
    let mut rng = seeded(4);
    let draws = 100;
    let mut fair = Vec::new();
    let mut biased = Vec::new();
    for _ in 0..500 {
        let truth: f64 = rng.random();
        let post: Vec<f64> = (0..draws).map(|_| rng.random()).collect();
        fair.push(sbc_rank(truth, &post));
        let narrow: Vec<f64> = post.iter().map(|v| 0.4 + 0.2 * v).collect();
        biased.push(sbc_rank(truth, &narrow));
    }
    assert!(rank_uniformity(&fair, draws, 10).unwrap().1 > 0.01);
    assert!(rank_uniformity(&biased, draws, 10).unwrap().1 < 1e-6);
    assert!(rank_uniformity(&fair, draws, 1).is_err());
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_maps(
        scores in prop::collection::vec(-5.0f64..5.0, 4..40),
        seed in 0u64..1000,
    ) {
        let mut rng = seeded(seed);
        let mut labels: Vec<bool> = scores.iter().map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let mapped: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-2.0 * s).exp())).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&mapped, &labels).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn outflow_conserves(values in prop::collection::vec(-1.0f64..1.0, 16)) {
        let a = Matrix::from_row_slice(4, 4, &values);
        let total: f64 = directed_outflow(&a).unwrap().iter().sum();
        prop_assert!(total.abs() < 1e-12);
    }

    #[test]
    fn rank_counts_draws_below(truth in -3.0f64..3.0, draws in prop::collection::vec(-3.0f64..3.0, 0..50)) {
        let r = sbc_rank(truth, &draws);
        prop_assert!(r <= draws.len());
        prop_assert_eq!(r, draws.iter().filter(|d| **d < truth).count());
    }
}
