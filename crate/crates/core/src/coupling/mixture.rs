use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fit::FittedCoupling;
use super::hyper::HyperPosterior;
use crate::error::{config_err, dim_err, Result};
use crate::model::density::log_gauss;
use crate::model::{CouplingSet, ObservedSignal};
use crate::rng::{substream, Rng};

/// Samples used for sign and threshold probabilities.
pub const SIGN_SAMPLES: usize = 10_000;
pub const SIGN_THRESHOLD: f64 = 0.1;

/// Equally weighted mixture of diagonal Gaussians over the flattened
/// couplings (`C*M*M`, row-major per condition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMixture {
    pub conditions: usize,
    pub nodes: usize,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

/// Per-entry reductions exported to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub condition: usize,
    pub target: usize,
    pub source: usize,
    pub mean: f64,
    pub std: f64,
    pub p_pos: f64,
    pub p_neg: f64,
    pub p_abs: f64,
}

impl CouplingMixture {
    pub fn new(
        conditions: usize,
        nodes: usize,
        means: Vec<Vec<f64>>,
        stds: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = conditions * nodes * nodes;
        if means.is_empty() || means.len() != stds.len() {
            return Err(config_err("a mixture needs at least one component"));
        }
        if means.iter().chain(&stds).any(|v| v.len() != n) {
            return Err(dim_err(format!("mixture components must have {n} entries")));
        }
        if stds.iter().flatten().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(config_err(
                "mixture standard deviations must be positive and finite",
            ));
        }
        Ok(Self {
            conditions,
            nodes,
            means,
            stds,
        })
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn len(&self) -> usize {
        self.conditions * self.nodes * self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, condition: usize, target: usize, source: usize) -> usize {
        (condition * self.nodes + target) * self.nodes + source
    }

    /// Mixture mean per entry: the arithmetic mean of the component means.
    pub fn mean(&self) -> Vec<f64> {
        let k = self.components() as f64;
        (0..self.len())
            .map(|e| self.means.iter().map(|m| m[e]).sum::<f64>() / k)
            .collect()
    }

    pub fn mean_set(&self) -> CouplingSet {
        CouplingSet::from_flat(self.conditions, self.nodes, &self.mean())
            .expect("consistent mixture shape")
    }

    pub fn std(&self) -> Vec<f64> {
        let k = self.components() as f64;
        let mean = self.mean();
        (0..self.len())
            .map(|e| {
                let second: f64 = self
                    .means
                    .iter()
                    .zip(&self.stds)
                    .map(|(m, s)| m[e] * m[e] + s[e] * s[e])
                    .sum::<f64>()
                    / k;
                (second - mean[e] * mean[e]).max(0.0).sqrt()
            })
            .collect()
    }

    /// Log marginal density of entry `e` at `value`.
    pub fn entry_log_density(&self, e: usize, value: f64) -> f64 {
        let logs: Vec<f64> = self
            .means
            .iter()
            .zip(&self.stds)
            .map(|(m, s)| log_gauss(value, m[e], s[e] * s[e]))
            .collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return peak;
        }
        peak + (logs.iter().map(|l| (l - peak).exp()).sum::<f64>() / logs.len() as f64).ln()
    }

    /// Joint log-density of a full coupling vector under the mixture.
    pub fn log_density(&self, flat: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .means
            .iter()
            .zip(&self.stds)
            .map(|(m, s)| {
                flat.iter()
                    .enumerate()
                    .map(|(e, v)| log_gauss(*v, m[e], s[e] * s[e]))
                    .sum()
            })
            .collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        peak + (logs.iter().map(|l| (l - peak).exp()).sum::<f64>() / logs.len() as f64).ln()
    }

    /// `n` joint draws: a uniformly chosen component, then independent normals.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let k = rng.random_range(0..self.components());
                self.means[k]
                    .iter()
                    .zip(&self.stds[k])
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    /// Empirical quantile of entry `e` from `n` seeded draws.
    pub fn quantile(&self, e: usize, prob: f64, n: usize, seed: u64) -> f64 {
        let mut v: Vec<f64> = self
            .sample(n, &mut substream(seed, &[5]))
            .into_iter()
            .map(|d| d[e])
            .collect();
        v.sort_by(f64::total_cmp);
        let idx = ((prob * (n - 1) as f64).round() as usize).min(n - 1);
        v[idx]
    }

    /// Mean, std, `P(a > th)`, `P(a < -th)` and `P(|a| > th)` per entry from
    /// [`SIGN_SAMPLES`] draws with a fixed seed.
    pub fn summary(&self, threshold: f64, seed: u64) -> Vec<EntrySummary> {
        let draws = self.sample(SIGN_SAMPLES, &mut substream(seed, &[6]));
        let (mean, std) = (self.mean(), self.std());
        let n = draws.len() as f64;
        let mut out = Vec::with_capacity(self.len());
        for c in 0..self.conditions {
            for target in 0..self.nodes {
                for source in 0..self.nodes {
                    let e = self.index(c, target, source);
                    let pos = draws.iter().filter(|d| d[e] > threshold).count() as f64 / n;
                    let neg = draws.iter().filter(|d| d[e] < -threshold).count() as f64 / n;
                    out.push(EntrySummary {
                        condition: c,
                        target,
                        source,
                        mean: mean[e],
                        std: std[e],
                        p_pos: pos,
                        p_neg: neg,
                        p_abs: pos + neg,
                    });
                }
            }
        }
        out
    }
}

/// Writes the summary with 1-based condition labels and 0-based node indices.
pub fn write_summary_csv(path: &Path, rows: &[EntrySummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "condition",
        "target",
        "source",
        "mean",
        "std",
        "p_pos",
        "p_neg",
        "p_abs_gt",
    ])?;
    for r in rows {
        w.write_record([
            (r.condition + 1).to_string(),
            r.target.to_string(),
            r.source.to_string(),
            format!("{:?}", r.mean),
            format!("{:?}", r.std),
            format!("{:?}", r.p_pos),
            format!("{:?}", r.p_neg),
            format!("{:?}", r.p_abs),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a summary written by [`write_summary_csv`].
pub fn read_summary_csv(path: &Path) -> Result<Vec<EntrySummary>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| crate::Error::Format(format!("bad summary field {i} in {rec:?}")))
        };
        let u = |i: usize| -> Result<usize> { Ok(f(i)? as usize) };
        out.push(EntrySummary {
            condition: u(0)?
                .checked_sub(1)
                .ok_or_else(|| crate::Error::Format("conditions are 1-based".into()))?,
            target: u(1)?,
            source: u(2)?,
            mean: f(3)?,
            std: f(4)?,
            p_pos: f(5)?,
            p_neg: f(6)?,
            p_abs: f(7)?,
        });
    }
    Ok(out)
}

/// Marginal posterior over the couplings: one regressed Gaussian per
/// hyper-parameter draw, equally weighted.
pub fn marginal_coupling_posterior(
    fitted: &FittedCoupling,
    hp: &dyn HyperPosterior,
    signal: &ObservedSignal,
    s_hp: usize,
    rng: &mut Rng,
) -> Result<CouplingMixture> {
    if s_hp < 1 {
        return Err(config_err(
            "the mixture needs at least one hyper-parameter draw",
        ));
    }
    let ctx = hp.condition(signal)?;
    let lay = fitted.regressor.layout;
    let mut means = Vec::with_capacity(s_hp);
    let mut stds = Vec::with_capacity(s_hp);
    for _ in 0..s_hp {
        let draw = hp.draw(&ctx, rng);
        let out = fitted
            .regressor
            .forward(&fitted.weights, &draw.hyper)
            .output;
        means.push(out[lay.mean_a()].to_vec());
        stds.push(out[lay.log_std_a()].iter().map(|s| s.exp()).collect());
    }
    CouplingMixture::new(lay.c, lay.m, means, stds)
}
