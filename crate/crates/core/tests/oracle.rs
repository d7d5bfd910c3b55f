use std::f64::consts::FRAC_PI_4;

use netcoupler::model::{
    observe, simulate_latent, ConditionTrack, CouplingSet, HyperParams, KernelShape, Matrix,
    MdsModel, ModelConfig, ObservedSignal, RegionRf,
};
use netcoupler::oracle::{
    grid_posterior_small, kalman_log_evidence, total_variation, Axis, GridParam,
};
use netcoupler::rng::{seeded, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;

const COUPLING: GridParam = GridParam::Coupling {
    condition: 0,
    target: 0,
    source: 0,
};

fn observed(model: &MdsModel, a: f64, hyper: &HyperParams, rng: &mut Rng) -> ObservedSignal {
    let t = model.config.t;
    let track = ConditionTrack::constant(t);
    let coupling = CouplingSet::single(Matrix::from_element(1, 1, a));
    let x = simulate_latent(&coupling, &hyper.q, &track, &[0.0], rng).unwrap();
    let rfs = vec![RegionRf {
        alpha: hyper.alpha[0],
        kernel: model.basis.kernel_unchecked(hyper.alpha[0]),
    }];
    observe(&x, &rfs, &hyper.r, model.config.dt, track, rng).unwrap()
}

/// Cell index of `v` on an axis built by `Axis::linear` / `Axis::log`.
fn cell(axis: &Axis, v: f64, log: bool) -> Option<usize> {
    let n = axis.len();
    let (lo, width, x) = if log {
        let w = (axis.points[1].ln() - axis.points[0].ln()).abs();
        (axis.points[0].ln() - 0.5 * w, w, v.ln())
    } else {
        let w = axis.widths[0];
        (axis.points[0] - 0.5 * w, w, v)
    };
    let k = ((x - lo) / width).floor();
    (k >= 0.0 && (k as usize) < n).then_some(k as usize)
}

#[test]
fn grid_marginals_agree_with_prior_importance_sampling() {
    let cfg = ModelConfig::new(1, 6, 3);
    let model = MdsModel::new(cfg.clone(), KernelShape::default()).unwrap();
    let truth = HyperParams {
        alpha: vec![0.2],
        q: vec![0.15],
        r: vec![0.1],
    };
    let signal = observed(&model, 0.3, &truth, &mut seeded(1));
    let axes = vec![
        Axis::alpha(0, 12),
        Axis::log(GridParam::Q(0), (-4.5f64).exp(), 0.5f64.exp(), 20),
        Axis::log(GridParam::R(0), (-4.5f64).exp(), 0.5f64.exp(), 20),
        Axis::linear(COUPLING, -1.2, 1.2, 48),
    ];
    let grid = grid_posterior_small(
        &model,
        &signal,
        &truth,
        &CouplingSet::zeros(1, 1),
        axes.clone(),
    )
    .unwrap();

    // Self-normalized importance sampling with the prior as proposal.
    let n = 1_000_000;
    let chunks = 64;
    let ln_q = LogNormal::new(cfg.lognormal_mu_q, cfg.lognormal_sigma_q).unwrap();
    let ln_r = LogNormal::new(cfg.lognormal_mu_r, cfg.lognormal_sigma_r).unwrap();
    let b = cfg.laplace_scale_a;
    let draws: Vec<([f64; 4], f64)> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = seeded(1000 + c as u64);
            (0..n / chunks)
                .map(|_| {
                    let alpha = rng.random_range(-FRAC_PI_4..FRAC_PI_4);
                    let q = ln_q.sample(&mut rng);
                    let r = ln_r.sample(&mut rng);
                    let u: f64 = rng.random::<f64>() - 0.5;
                    let a = -b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
                    let kernel = model.basis.kernel_unchecked(alpha);
                    let coupling = CouplingSet::single(Matrix::from_element(1, 1, a));
                    let lw = kalman_log_evidence(
                        &signal.y,
                        &[kernel],
                        &coupling,
                        &signal.track,
                        &[q],
                        &[r],
                    )
                    .unwrap();
                    ([alpha, q, r, a], lw)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let peak = draws.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = draws.iter().map(|d| (d.1 - peak).exp()).collect();
    let ess = weights.iter().sum::<f64>().powi(2) / weights.iter().map(|w| w * w).sum::<f64>();
    assert!(ess > 10_000.0, "effective sample size {ess}");

    for (i, axis) in axes.iter().enumerate() {
        let log = matches!(axis.param, GridParam::Q(_) | GridParam::R(_));
        let mut hist = vec![0.0; axis.len()];
        let mut total = 0.0;
        for (d, w) in draws.iter().zip(&weights) {
            total += w;
            if let Some(k) = cell(axis, d.0[i], log) {
                hist[k] += w;
            }
        }
        hist.iter_mut().for_each(|h| *h /= total);
        let tv = total_variation(&grid.marginal(i), &hist);
        assert!(tv < 0.05, "axis {:?}: total variation {tv}", axis.param);
    }
}

#[test]
fn posterior_concentrates_as_the_series_grows() {
    let truth = HyperParams {
        alpha: vec![0.0],
        q: vec![0.2],
        r: vec![0.05],
    };
    let a_true = 0.5;
    let lengths = [4, 6, 8];
    let datasets = 40;
    let mut mass = vec![0.0; lengths.len()];
    for s in 0..datasets {
        let full_model = MdsModel::new(ModelConfig::new(1, 8, 3), KernelShape::default()).unwrap();
        let full = observed(&full_model, a_true, &truth, &mut seeded(100 + s));
        for (li, &t) in lengths.iter().enumerate() {
            let model = MdsModel::new(ModelConfig::new(1, t, 3), KernelShape::default()).unwrap();
            let signal = ObservedSignal {
                y: full.y.columns(0, t).into_owned(),
                dt: full.dt,
                track: ConditionTrack::constant(t),
            };
            let axis = Axis::linear(COUPLING, -1.5, 1.5, 301);
            let grid = grid_posterior_small(
                &model,
                &signal,
                &truth,
                &CouplingSet::zeros(1, 1),
                vec![axis.clone()],
            )
            .unwrap();
            let near: f64 = axis
                .points
                .iter()
                .zip(grid.marginal(0))
                .filter(|(v, _)| (*v - a_true).abs() <= 0.1)
                .map(|(_, p)| p)
                .sum();
            mass[li] += near / datasets as f64;
        }
    }
    assert!(mass[0] <= mass[1] && mass[1] <= mass[2], "{mass:?}");
}
