use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use netcoupler::coupling::{
    elbo_estimate, fit_parameters, fit_parameters_with, marginal_coupling_posterior,
    CouplingMixture, ElboOptions, FitConfig, HpContext, HpDraw, HyperPosterior, HyperRegressor,
    PointMassHp, RegressorMode,
};
use netcoupler::favi::{FaviArch, FaviNet, FaviTrainConfig, HpEstimator};
use netcoupler::model::{
    sample_dataset, ConditionTrack, CouplingPrior, CouplingSet, HyperParams, KernelShape, Matrix,
    MdsModel, ModelConfig, ObservedSignal, RfBasis,
};
use netcoupler::rng::{seeded, Rng};
use netcoupler::Error;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn log_gauss(v: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (v - mean).powi(2) / (2.0 * var)
}

fn log_normal_density(v: f64, mu: f64, sigma: f64) -> f64 {
    log_gauss(v.ln(), mu, sigma * sigma) - v.ln()
}

fn delta_model(m: usize, t: usize) -> MdsModel {
    let cfg = ModelConfig {
        coupling_prior: CouplingPrior::Gaussian { variance: 1.0 },
        ..ModelConfig::new(m, t, 1)
    };
    MdsModel::from_basis(
        cfg,
        RfBasis {
            h0: vec![1.0],
            h0dot: vec![0.0],
            dt: 1.0,
        },
    )
    .unwrap()
}

fn signal(rows: &[&[f64]]) -> ObservedSignal {
    let t = rows[0].len();
    ObservedSignal {
        y: Matrix::from_fn(rows.len(), t, |i, s| rows[i][s]),
        dt: 1.0,
        track: ConditionTrack::constant(t),
    }
}

struct Conjugate {
    model: MdsModel,
    signal: ObservedSignal,
    hyper: HyperParams,
    reg: HyperRegressor,
    exact: Vec<f64>,
    evidence: f64,
    post_var: f64,
}

/// Known noise, zero couplings and an identity kernel: the states are
/// independent a posteriori, so the diagonal family contains the exact
/// posterior.
fn conjugate() -> Conjugate {
    let (q, r) = (0.3, 0.2);
    let y = [0.5, -1.2, 0.8];
    let model = delta_model(1, 3);
    let signal = signal(&[&y]);
    let hyper = HyperParams {
        alpha: vec![0.0],
        q: vec![q],
        r: vec![r],
    };
    let reg = HyperRegressor::new(RegressorMode::Direct, &model.config);
    let post_var = q * r / (q + r);
    let post_mean: Vec<f64> = y.iter().map(|v| q / (q + r) * v).collect();
    let mut exact = post_mean;
    exact.extend([0.5 * post_var.ln(); 3]);
    exact.extend([0.0, 0.0]);
    let cfg = &model.config;
    let evidence = y.iter().map(|v| log_gauss(*v, 0.0, q + r)).sum::<f64>()
        + log_normal_density(q, cfg.lognormal_mu_q, cfg.lognormal_sigma_q)
        + log_normal_density(r, cfg.lognormal_mu_r, cfg.lognormal_sigma_r)
        - (PI / 2.0).ln();
    Conjugate {
        model,
        signal,
        hyper,
        reg,
        exact,
        evidence,
        post_var,
    }
}

fn elbo(c: &Conjugate, p: &[f64], s_p: usize, rng: &mut Rng) -> f64 {
    let zero = CouplingSet::zeros(1, 1);
    let draw = HpDraw {
        hyper: c.hyper.clone(),
        log_density: 0.0,
    };
    let opts = ElboOptions {
        s_p,
        fixed_coupling: Some(&zero),
        step: 0,
    };
    elbo_estimate(&c.model, &c.signal, &draw, &c.reg, p, opts, rng).unwrap()
}

#[test]
fn elbo_at_the_exact_posterior_is_the_log_evidence() {
    let c = conjugate();
    let value = elbo(&c, &c.exact, 10_000, &mut seeded(1));
    // The entropy is analytic and the expected log joint is sampled; at the
    // exact posterior the sampled term is log q(X) plus a constant, whose
    // standard deviation over three states is sqrt(3 / 2).
    let se = (1.5f64 / 10_000.0).sqrt();
    assert!(
        (value - c.evidence).abs() < 4.0 * se,
        "{value} vs {}",
        c.evidence
    );
}

#[test]
fn perturbed_posterior_loses_exactly_its_kl() {
    let c = conjugate();
    let (shift, widen) = (0.3, 0.2);
    let mut p = c.exact.clone();
    p[..3].iter_mut().for_each(|v| *v += shift);
    p[3..6].iter_mut().for_each(|v| *v += widen);
    let s1 = c.post_var * (2.0 * widen).exp();
    let kl_one = 0.5 * (c.post_var / s1).ln() + (s1 + shift * shift) / (2.0 * c.post_var) - 0.5;
    let expected = c.evidence - 3.0 * kl_one;
    let value = elbo(&c, &p, 10_000, &mut seeded(2));
    assert!((value - expected).abs() < 0.03, "{value} vs {expected}");
}

#[test]
fn single_draw_estimates_are_unbiased() {
    let c = conjugate();
    let mut p = c.exact.clone();
    p[0] -= 0.4;
    p[4] -= 0.3;
    let reference = elbo(&c, &p, 200_000, &mut seeded(3));
    let mut rng = seeded(4);
    let n = 4000;
    let draws: Vec<f64> = (0..n).map(|_| elbo(&c, &p, 1, &mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let se = sd / (n as f64).sqrt();
    assert!(
        (mean - reference).abs() < 4.0 * se + 1e-3,
        "{mean} vs {reference} (se {se})"
    );
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let cfg = ModelConfig::new(2, 12, 4);
    let model = MdsModel::new(cfg.clone(), KernelShape::default()).unwrap();
    let ds = sample_dataset(&model, &mut seeded(10)).unwrap();
    let reg = HyperRegressor::new(RegressorMode::Amortized { hidden: vec![5] }, &cfg);
    let mut rng = seeded(11);
    let mut p = reg.init(&mut rng, -1.0, -1.5);
    p.iter_mut()
        .for_each(|v| *v += 0.05 * rng.sample::<f64, _>(StandardNormal));
    let draw = HpDraw {
        hyper: ds.hyper(),
        log_density: -0.7,
    };
    let opts = ElboOptions {
        s_p: 3,
        ..ElboOptions::default()
    };
    let f = |w: &[f64]| {
        elbo_estimate(&model, &ds.signal, &draw, &reg, w, opts, &mut seeded(12)).unwrap()
    };
    let mut grad = vec![0.0; p.len()];
    netcoupler::coupling::elbo_with_grad(
        &model,
        &ds.signal,
        &draw,
        &reg,
        &p,
        opts,
        &mut seeded(12),
        Some(&mut grad),
    )
    .unwrap();
    let h = 1e-5;
    for i in (0..p.len()).step_by(p.len() / 40 + 1) {
        let mut up = p.clone();
        let mut down = p.clone();
        up[i] += h;
        down[i] -= h;
        let fd = (f(&up) - f(&down)) / (2.0 * h);
        assert!(
            (fd - grad[i]).abs() <= 1e-5 * (1.0 + fd.abs()),
            "weight {i}: fd {fd}, analytic {}",
            grad[i]
        );
    }
}

#[test]
fn fit_leaves_the_hyper_parameter_posterior_untouched() {
    let cfg = ModelConfig::new(2, 80, 4);
    let model = MdsModel::new(cfg, KernelShape::default()).unwrap();
    let ds = sample_dataset(&model, &mut seeded(20)).unwrap();
    let arch = FaviArch::default();
    let net = FaviNet::new(arch).unwrap();
    let weights = net.init(&mut seeded(21));
    let est = HpEstimator::new(net, weights, FaviTrainConfig::new(21), 0).unwrap();
    let before = (est.checksum(), est.weights().to_vec());
    let config = FitConfig {
        steps: 5,
        s_hp: 3,
        regressor: RegressorMode::Amortized { hidden: vec![8] },
        ..FitConfig::new(22)
    };
    fit_parameters(&model, &ds.signal, &est, &config, None).unwrap();
    assert_eq!(before.0, est.checksum());
    assert_eq!(before.1, est.weights());
}

/// Reports a new fingerprint on every call.
struct Drifting {
    inner: PointMassHp,
    calls: AtomicUsize,
}

impl HyperPosterior for Drifting {
    fn fingerprint(&self) -> String {
        self.calls.fetch_add(1, Ordering::SeqCst).to_string()
    }

    fn condition(&self, signal: &ObservedSignal) -> netcoupler::Result<HpContext> {
        self.inner.condition(signal)
    }

    fn draw(&self, ctx: &HpContext, rng: &mut Rng) -> HpDraw {
        self.inner.draw(ctx, rng)
    }
}

#[test]
fn a_changing_hyper_parameter_posterior_is_rejected() {
    let model = delta_model(1, 5);
    let sig = signal(&[&[0.1, 0.2, -0.3, 0.0, 0.4]]);
    let hp = Drifting {
        inner: PointMassHp {
            hyper: HyperParams {
                alpha: vec![0.0],
                q: vec![0.1],
                r: vec![0.1],
            },
        },
        calls: AtomicUsize::new(0),
    };
    let config = FitConfig {
        steps: 2,
        s_hp: 1,
        regressor: RegressorMode::Direct,
        ..FitConfig::new(1)
    };
    assert!(matches!(
        fit_parameters(&model, &sig, &hp, &config, None),
        Err(Error::Domain(_))
    ));
}

#[test]
fn numerical_failure_aborts_with_a_checkpoint() {
    let model = delta_model(1, 5);
    let sig = signal(&[&[0.1, 0.2, -0.3, 0.0, 0.4]]);
    let hp = PointMassHp {
        hyper: HyperParams {
            alpha: vec![0.0],
            q: vec![-1.0],
            r: vec![0.1],
        },
    };
    let config = FitConfig {
        steps: 2,
        s_hp: 1,
        regressor: RegressorMode::Direct,
        ..FitConfig::new(1)
    };
    let dir = tempfile::tempdir().unwrap();
    match fit_parameters(&model, &sig, &hp, &config, Some(dir.path())) {
        Err(Error::Aborted {
            step,
            checkpoint: Some(path),
            ..
        }) => {
            assert_eq!(step, 0);
            assert!(path.exists());
        }
        other => panic!("expected an abort, got {other:?}"),
    }
}

#[test]
fn pure_noise_gives_couplings_indistinguishable_from_zero() {
    let (m, t) = (2, 150);
    let model = delta_model(m, t);
    let mut rng = seeded(30);
    let y = Matrix::from_fn(m, t, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sig = ObservedSignal {
        y,
        dt: 1.0,
        track: ConditionTrack::constant(t),
    };
    let hp = PointMassHp {
        hyper: HyperParams {
            alpha: vec![0.0; m],
            q: vec![0.5; m],
            r: vec![0.5; m],
        },
    };
    let config = FitConfig {
        steps: 3000,
        s_hp: 1,
        lr: 1e-2,
        regressor: RegressorMode::Direct,
        ..FitConfig::new(31)
    };
    let (fit, _) = fit_parameters(&model, &sig, &hp, &config, None).unwrap();
    let post = fit.posterior(&hp.hyper);
    for (mean, log_std) in post.mean_a[0].iter().zip(post.log_std_a[0].iter()) {
        assert!(
            mean.abs() < 2.0 * log_std.exp(),
            "mean {mean}, std {}",
            log_std.exp()
        );
    }
}

#[test]
fn fixed_couplings_are_not_learned() {
    let model = delta_model(1, 5);
    let sig = signal(&[&[0.1, 0.2, -0.3, 0.0, 0.4]]);
    let hp = PointMassHp {
        hyper: HyperParams {
            alpha: vec![0.0],
            q: vec![0.1],
            r: vec![0.1],
        },
    };
    let config = FitConfig {
        steps: 20,
        s_hp: 1,
        regressor: RegressorMode::Direct,
        ..FitConfig::new(5)
    };
    let fixed = CouplingSet::single(Matrix::from_element(1, 1, 0.3));
    let (fit, _) = fit_parameters_with(&model, &sig, &hp, &config, Some(&fixed), None).unwrap();
    let post = fit.posterior(&hp.hyper);
    assert_eq!(post.mean_a[0][(0, 0)], 0.0);
    assert_eq!(post.log_std_a[0][(0, 0)], config.init_log_std_a);
}

#[test]
fn a_point_mass_gives_a_single_gaussian() {
    let model = delta_model(2, 20);
    let ds = sample_dataset(&model, &mut seeded(40)).unwrap();
    let hp = PointMassHp { hyper: ds.hyper() };
    let config = FitConfig {
        steps: 30,
        s_hp: 1,
        regressor: RegressorMode::Direct,
        ..FitConfig::new(41)
    };
    let (fit, _) = fit_parameters(&model, &ds.signal, &hp, &config, None).unwrap();
    let mix = marginal_coupling_posterior(&fit, &hp, &ds.signal, 5, &mut seeded(42)).unwrap();
    let post = fit.posterior(&hp.hyper);
    let mean: Vec<f64> = post.mean_a[0].transpose().iter().copied().collect();
    let std: Vec<f64> = post.log_std_a[0]
        .transpose()
        .iter()
        .map(|s| s.exp())
        .collect();
    for e in 0..4 {
        assert!((mix.mean()[e] - mean[e]).abs() < 1e-12);
        assert!((mix.std()[e] - std[e]).abs() < 1e-12);
        let v = mean[e] + 0.3;
        assert!(
            (mix.entry_log_density(e, v) - log_gauss(v, mean[e], std[e] * std[e])).abs() < 1e-12
        );
    }
}

#[test]
fn mixture_moments_follow_total_expectation_and_variance() {
    let mix = CouplingMixture::new(
        1,
        1,
        vec![vec![-1.0], vec![0.5], vec![2.0]],
        vec![vec![0.5], vec![1.0], vec![0.2]],
    )
    .unwrap();
    let mean = (-1.0 + 0.5 + 2.0) / 3.0;
    let second = (1.0 + 0.25 + 0.25 + 1.0 + 4.0 + 0.04) / 3.0;
    assert!((mix.mean()[0] - mean).abs() < 1e-14);
    assert!((mix.std()[0] - (second - mean * mean).sqrt()).abs() < 1e-14);
    let draws: Vec<f64> = mix
        .sample(60_000, &mut seeded(50))
        .into_iter()
        .map(|d| d[0])
        .collect();
    let emp = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((emp - mean).abs() < 0.03, "{emp}");
    assert!(CouplingMixture::new(1, 1, vec![vec![0.0]], vec![vec![0.0]]).is_err());
}

#[test]
fn clear_positive_coupling_has_high_sign_probability() {
    let (m, t) = (2, 400);
    let model = delta_model(m, t);
    let a = Matrix::from_row_slice(2, 2, &[0.3, 0.0, 0.6, 0.3]);
    let q = vec![0.2; m];
    let track = ConditionTrack::constant(t);
    let mut rng = seeded(60);
    let x = netcoupler::model::simulate_latent(
        &CouplingSet::single(a),
        &q,
        &track,
        &[0.0; 2],
        &mut rng,
    )
    .unwrap();
    let y = Matrix::from_fn(m, t, |i, s| {
        x.x[(i, s)] + 0.05 * rng.sample::<f64, _>(StandardNormal)
    });
    let sig = ObservedSignal { y, dt: 1.0, track };
    let hp = PointMassHp {
        hyper: HyperParams {
            alpha: vec![0.0; m],
            q,
            r: vec![0.0025; m],
        },
    };
    let config = FitConfig {
        steps: 2000,
        s_hp: 1,
        lr: 1e-2,
        regressor: RegressorMode::Direct,
        ..FitConfig::new(61)
    };
    let (fit, _) = fit_parameters(&model, &sig, &hp, &config, None).unwrap();
    let mix = marginal_coupling_posterior(&fit, &hp, &sig, 1, &mut seeded(62)).unwrap();
    let rows = mix.summary(0.1, 63);
    let edge = rows
        .iter()
        .find(|r| r.target == 1 && r.source == 0)
        .unwrap();
    let absent = rows
        .iter()
        .find(|r| r.target == 0 && r.source == 1)
        .unwrap();
    assert!(edge.p_pos > 0.95, "{edge:?}");
    assert!(absent.p_abs < edge.p_abs, "{absent:?}");
}
