//! Prior sampling and forward simulation of the generative model.

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use super::config::{CouplingPrior, ModelConfig, ALPHA_BOUND};
use super::rf::{build_rf, RegionRf};
use super::types::{
    ConditionTrack, CouplingSet, HyperParams, LatentTrajectory, Matrix, NoiseLevels, ObservedSignal,
};
use super::MdsModel;
use crate::error::{dim_err, Error, Result};
use crate::rng::Rng;

/// Magnitude beyond which a latent rollout is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Inverse-CDF Laplace(0, scale) draw.
pub fn sample_laplace(scale: f64, rng: &mut Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn sample_coupling_entry(config: &ModelConfig, rng: &mut Rng) -> f64 {
    match config.coupling_prior {
        CouplingPrior::Laplace => sample_laplace(config.laplace_scale_a, rng),
        CouplingPrior::Gaussian { variance } => {
            variance.sqrt() * rng.sample::<f64, _>(StandardNormal)
        }
    }
}

/// Open-interval uniform draw on (-pi/4, pi/4).
pub fn sample_alpha(rng: &mut Rng) -> f64 {
    loop {
        let a = ALPHA_BOUND * (2.0 * rng.random::<f64>() - 1.0);
        if a.abs() < ALPHA_BOUND {
            return a;
        }
    }
}

/// A draw of every latent quantity except the trajectory itself.
#[derive(Debug, Clone)]
pub struct PriorDraw {
    pub coupling: CouplingSet,
    pub noise: NoiseLevels,
    pub rfs: Vec<RegionRf>,
    pub track: ConditionTrack,
}

impl PriorDraw {
    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            alpha: self.rfs.iter().map(|rf| rf.alpha).collect(),
            q: self.noise.q.clone(),
            r: self.noise.r.clone(),
        }
    }
}

pub fn sample_prior(model: &MdsModel, rng: &mut Rng) -> PriorDraw {
    let cfg = &model.config;
    let (m, c) = (cfg.m, cfg.c);
    let matrices = (0..c)
        .map(|_| {
            let mut a = Matrix::zeros(m, m);
            // Row-major fill so flat manifests line up with draw order.
            for i in 0..m {
                for j in 0..m {
                    a[(i, j)] = sample_coupling_entry(cfg, rng);
                }
            }
            a
        })
        .collect();
    let ln_q = LogNormal::new(cfg.lognormal_mu_q, cfg.lognormal_sigma_q).expect("validated config");
    let ln_r = LogNormal::new(cfg.lognormal_mu_r, cfg.lognormal_sigma_r).expect("validated config");
    let q: Vec<f64> = (0..m).map(|_| ln_q.sample(rng)).collect();
    let r: Vec<f64> = (0..m).map(|_| ln_r.sample(rng)).collect();
    let rfs = (0..m)
        .map(|_| build_rf(sample_alpha(rng), &model.basis).expect("alpha drawn inside support"))
        .collect();
    let labels = (0..cfg.t).map(|_| rng.random_range(0..c)).collect();
    PriorDraw {
        coupling: CouplingSet { matrices },
        noise: NoiseLevels { q, r },
        rfs,
        track: ConditionTrack::new(labels, c).expect("labels drawn in range"),
    }
}

/// Rolls out `x[t+1] = A_{c[t]} x[t] + eps`, `eps ~ N(0, diag(q))`.
pub fn simulate_latent(
    coupling: &CouplingSet,
    q: &[f64],
    track: &ConditionTrack,
    x0: &[f64],
    rng: &mut Rng,
) -> Result<LatentTrajectory> {
    let m = x0.len();
    let t_len = track.len();
    if q.len() != m || coupling.nodes() != m {
        return Err(dim_err(format!(
            "x0 has {m} nodes, q {}, coupling {}",
            q.len(),
            coupling.nodes()
        )));
    }
    if track.conditions() > coupling.conditions() {
        return Err(dim_err(
            "condition track references more conditions than coupling matrices",
        ));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("x0 must be finite".into()));
    }
    let sd: Vec<f64> = q.iter().map(|v| v.sqrt()).collect();
    let mut x = Matrix::zeros(m, t_len);
    x.column_mut(0).copy_from_slice(x0);
    for t in 0..t_len.saturating_sub(1) {
        let next = &coupling.matrices[track.at(t)] * x.column(t);
        for i in 0..m {
            let v = next[i] + sd[i] * rng.sample::<f64, _>(StandardNormal);
            if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    step: t + 1,
                    detail: format!("latent state of node {i} reached {v:e}"),
                });
            }
            x[(i, t + 1)] = v;
        }
    }
    Ok(LatentTrajectory { x })
}

/// Causal same-length convolution with zero history before t = 0.
pub fn convolve_causal(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|t| {
            h.iter()
                .take(t + 1)
                .enumerate()
                .map(|(k, hk)| hk * x[t - k])
                .sum()
        })
        .collect()
}

/// Convolves each latent row with its region's kernel and adds N(0, r_m)
/// noise. `r_m = 0` yields the pure convolution.
pub fn observe(
    latent: &LatentTrajectory,
    rfs: &[RegionRf],
    r: &[f64],
    dt: f64,
    track: ConditionTrack,
    rng: &mut Rng,
) -> Result<ObservedSignal> {
    let (m, t_len) = latent.x.shape();
    if rfs.len() != m || r.len() != m {
        return Err(dim_err(format!(
            "{m} latent rows but {} kernels and {} noise levels",
            rfs.len(),
            r.len()
        )));
    }
    if track.len() != t_len {
        return Err(dim_err("condition track length differs from T"));
    }
    if r.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain(
            "measurement variances must be non-negative".into(),
        ));
    }
    let mut y = Matrix::zeros(m, t_len);
    for i in 0..m {
        let row: Vec<f64> = latent.x.row(i).iter().copied().collect();
        let conv = convolve_causal(&row, &rfs[i].kernel);
        let sd = r[i].sqrt();
        for (t, v) in conv.into_iter().enumerate() {
            let noise = if sd > 0.0 {
                sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            y[(i, t)] = v + noise;
        }
    }
    Ok(ObservedSignal { y, dt, track })
}

/// Full synthetic draw: parameters, latent trajectory and measurements.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub prior: PriorDraw,
    pub latent: LatentTrajectory,
    pub signal: ObservedSignal,
}

impl SyntheticDataset {
    pub fn hyper(&self) -> HyperParams {
        self.prior.hyper()
    }
}

/// Simulates a dataset for a fixed coupling set, drawing everything else
/// from the prior. `x0 ~ N(0, diag(q))`.
pub fn simulate_with_coupling(
    model: &MdsModel,
    coupling: &CouplingSet,
    rng: &mut Rng,
) -> Result<SyntheticDataset> {
    let mut prior = sample_prior(model, rng);
    prior.coupling = coupling.clone();
    finish_dataset(model, prior, rng)
}

fn finish_dataset(model: &MdsModel, prior: PriorDraw, rng: &mut Rng) -> Result<SyntheticDataset> {
    let x0: Vec<f64> = prior
        .noise
        .q
        .iter()
        .map(|q| q.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let latent = simulate_latent(&prior.coupling, &prior.noise.q, &prior.track, &x0, rng)?;
    let signal = observe(
        &latent,
        &prior.rfs,
        &prior.noise.r,
        model.config.dt,
        prior.track.clone(),
        rng,
    )?;
    Ok(SyntheticDataset {
        prior,
        latent,
        signal,
    })
}

/// Prior-predictive draw restricted to stable dynamics: coupling draws with
/// spectral radius >= 1 are redrawn.
pub fn sample_dataset(model: &MdsModel, rng: &mut Rng) -> Result<SyntheticDataset> {
    for _ in 0..1000 {
        let prior = sample_prior(model, rng);
        if prior.coupling.spectral_radius() >= 1.0 {
            continue;
        }
        match finish_dataset(model, prior, rng) {
            Err(Error::Divergence { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::Divergence {
        step: 0,
        detail: "no stable prior draw in 1000 attempts".into(),
    })
}
