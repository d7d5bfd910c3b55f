//! Brute-force posterior on a tensor-product grid for tiny instances. The
//! latent trajectory is integrated out exactly with the Kalman evidence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kalman::kalman_log_evidence;
use crate::error::{dim_err, Error, Result};
use crate::model::density::{log_gauss, log_normal_density};
use crate::model::rf::alpha_in_support;
use crate::model::{
    CouplingPrior, CouplingSet, HyperParams, MdsModel, ObservedSignal, ALPHA_BOUND,
};

pub const MAX_GRID_POINTS: usize = 10_000_000;

/// Parameter addressed by a grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridParam {
    Alpha(usize),
    Q(usize),
    R(usize),
    Coupling {
        condition: usize,
        target: usize,
        source: usize,
    },
}

/// Grid points with their quadrature cell widths (in the parameter's own
/// units, so the prior density is used as is).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub param: GridParam,
    pub points: Vec<f64>,
    pub widths: Vec<f64>,
}

impl Axis {
    /// `n` cell midpoints evenly spaced on `[lo, hi]`.
    pub fn linear(param: GridParam, lo: f64, hi: f64, n: usize) -> Self {
        let w = (hi - lo) / n as f64;
        Self {
            param,
            points: (0..n).map(|i| lo + (i as f64 + 0.5) * w).collect(),
            widths: vec![w; n],
        }
    }

    /// `n` cells evenly spaced in `ln`, for positive parameters.
    pub fn log(param: GridParam, lo: f64, hi: f64, n: usize) -> Self {
        let (a, b) = (lo.ln(), hi.ln());
        let w = (b - a) / n as f64;
        let points: Vec<f64> = (0..n).map(|i| (a + (i as f64 + 0.5) * w).exp()).collect();
        let widths = points.iter().map(|p| p * w).collect();
        Self {
            param,
            points,
            widths,
        }
    }

    /// Angle axis covering the whole prior support.
    pub fn alpha(region: usize, n: usize) -> Self {
        Self::linear(GridParam::Alpha(region), -ALPHA_BOUND, ALPHA_BOUND, n)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Normalized posterior probabilities over the grid cells, last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPosterior {
    pub axes: Vec<Axis>,
    pub probs: Vec<f64>,
}

impl GridPosterior {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::len).collect()
    }

    /// Cell probabilities of axis `i`, summed over all other axes.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let shape = self.shape();
        let inner: usize = shape[i + 1..].iter().product();
        let n = shape[i];
        let mut out = vec![0.0; n];
        for (idx, p) in self.probs.iter().enumerate() {
            out[(idx / inner) % n] += p;
        }
        out
    }

    /// Marginal density (probability per unit) at the cell midpoints.
    pub fn marginal_density(&self, i: usize) -> Vec<f64> {
        self.marginal(i)
            .iter()
            .zip(&self.axes[i].widths)
            .map(|(p, w)| p / w)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Posterior over the gridded parameters with every other parameter held at
/// the values in `fixed_hyper` / `fixed_coupling`.
pub fn grid_posterior_small(
    model: &MdsModel,
    signal: &ObservedSignal,
    fixed_hyper: &HyperParams,
    fixed_coupling: &CouplingSet,
    axes: Vec<Axis>,
) -> Result<GridPosterior> {
    let cfg = &model.config;
    let (m, t) = signal.y.shape();
    if m > 2 || t > 8 {
        return Err(Error::Resource(format!(
            "grid posteriors are limited to M <= 2, T <= 8 (got M = {m}, T = {t})"
        )));
    }
    if fixed_hyper.nodes() != m
        || fixed_coupling.nodes() != m
        || fixed_coupling.conditions() != cfg.c
    {
        return Err(dim_err("fixed parameters disagree with the signal"));
    }
    let total = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    let total = match total {
        Some(n) if n <= MAX_GRID_POINTS && n > 0 => n,
        _ => {
            return Err(Error::Resource(format!(
                "grid has more than {MAX_GRID_POINTS} points or an empty axis"
            )))
        }
    };
    for a in &axes {
        let ok = match a.param {
            GridParam::Alpha(i) | GridParam::Q(i) | GridParam::R(i) => i < m,
            GridParam::Coupling {
                condition,
                target,
                source,
            } => condition < cfg.c && target < m && source < m,
        };
        if !ok || a.points.len() != a.widths.len() {
            return Err(dim_err(format!(
                "axis {:?} does not fit the model",
                a.param
            )));
        }
    }
    let shape: Vec<usize> = axes.iter().map(Axis::len).collect();

    let log_post = |flat: usize| -> f64 {
        let mut hyper = fixed_hyper.clone();
        let mut coupling = fixed_coupling.clone();
        let mut log_w = 0.0;
        let mut rem = flat;
        for (ax, n) in axes.iter().zip(&shape).rev() {
            let j = rem % n;
            rem /= n;
            let v = ax.points[j];
            log_w += ax.widths[j].ln();
            match ax.param {
                GridParam::Alpha(i) => hyper.alpha[i] = v,
                GridParam::Q(i) => hyper.q[i] = v,
                GridParam::R(i) => hyper.r[i] = v,
                GridParam::Coupling {
                    condition,
                    target,
                    source,
                } => coupling.matrices[condition][(target, source)] = v,
            }
        }
        if !hyper.alpha.iter().all(|a| alpha_in_support(*a))
            || hyper.q.iter().chain(&hyper.r).any(|v| !(*v > 0.0))
        {
            return f64::NEG_INFINITY;
        }
        let kernels: Vec<Vec<f64>> = hyper
            .alpha
            .iter()
            .map(|a| model.basis.kernel_unchecked(*a))
            .collect();
        let Ok(ev) = kalman_log_evidence(
            &signal.y,
            &kernels,
            &coupling,
            &signal.track,
            &hyper.q,
            &hyper.r,
        ) else {
            return f64::NEG_INFINITY;
        };
        let mut prior = 0.0;
        for a in &coupling.matrices {
            for v in a.iter() {
                prior += match cfg.coupling_prior {
                    CouplingPrior::Laplace => {
                        -(2.0 * cfg.laplace_scale_a).ln() - v.abs() / cfg.laplace_scale_a
                    }
                    CouplingPrior::Gaussian { variance } => log_gauss(*v, 0.0, variance),
                };
            }
        }
        for i in 0..m {
            prior += log_normal_density(hyper.q[i], cfg.lognormal_mu_q, cfg.lognormal_sigma_q);
            prior += log_normal_density(hyper.r[i], cfg.lognormal_mu_r, cfg.lognormal_sigma_r);
        }
        ev + prior + log_w
    };

    const BLOCK: usize = 4096;
    let logs: Vec<f64> = (0..total.div_ceil(BLOCK))
        .into_par_iter()
        .flat_map_iter(|b| {
            let lo = b * BLOCK;
            (lo..(lo + BLOCK).min(total))
                .map(log_post)
                .collect::<Vec<_>>()
        })
        .collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::Domain(
            "grid posterior has no mass on the grid".into(),
        ));
    }
    let mut probs: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    Ok(GridPosterior { axes, probs })
}

/// Total-variation distance between two probability vectors on the same cells.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
