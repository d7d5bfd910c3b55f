use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{simulate_with_coupling, CouplingSet, Matrix, MdsModel, SyntheticDataset};
use crate::rng::{substream, Rng};

/// Sparse benchmark network generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub networks: usize,
    pub subjects: usize,
    /// Self-coupling placed on every diagonal entry.
    pub diagonal: f64,
    /// Off-diagonal magnitude; entries are `0`, `+weight` or `-weight`.
    pub weight: f64,
    pub p_zero: f64,
    pub p_pos: f64,
    pub p_neg: f64,
    /// Networks at or above this spectral radius are redrawn.
    pub max_radius: f64,
    pub max_rejections: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            networks: 20,
            subjects: 10,
            diagonal: 0.5,
            weight: 0.2,
            p_zero: 0.7,
            p_pos: 0.2,
            p_neg: 0.1,
            max_radius: 0.95,
            max_rejections: 100,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.networks == 0 || self.subjects == 0 {
            return Err(config_err(
                "benchmark needs at least one network and one subject",
            ));
        }
        let probs = [self.p_zero, self.p_pos, self.p_neg];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(config_err(
                "off-diagonal probabilities must be in [0, 1] and sum to 1",
            ));
        }
        if !(self.max_radius > 0.0) || self.max_rejections == 0 {
            return Err(config_err("max_radius and max_rejections must be positive"));
        }
        Ok(())
    }
}

/// One off-diagonal draw from `{0, +w, -w}`.
pub fn sample_off_diagonal(cfg: &BenchConfig, rng: &mut Rng) -> f64 {
    let u: f64 = rng.random();
    if u < cfg.p_zero {
        0.0
    } else if u < cfg.p_zero + cfg.p_pos {
        cfg.weight
    } else {
        -cfg.weight
    }
}

/// Draws one stable sparse coupling matrix.
pub fn sample_sparse_network(m: usize, cfg: &BenchConfig, rng: &mut Rng) -> Result<Matrix> {
    if m < 2 {
        return Err(config_err("benchmark networks need at least two nodes"));
    }
    for _ in 0..cfg.max_rejections {
        let a = Matrix::from_fn(m, m, |i, j| {
            if i == j {
                cfg.diagonal
            } else {
                sample_off_diagonal(cfg, rng)
            }
        });
        if crate::model::types::spectral_radius(&a) < cfg.max_radius {
            return Ok(a);
        }
    }
    Err(Error::Config(format!(
        "{} consecutive networks had spectral radius >= {}; use fewer nodes or smaller weights",
        cfg.max_rejections, cfg.max_radius
    )))
}

#[derive(Debug, Clone)]
pub struct BenchNetwork {
    pub id: usize,
    pub coupling: CouplingSet,
    pub subjects: Vec<SyntheticDataset>,
}

/// Networks with their per-subject simulations; all subjects of a network
/// share its coupling matrix.
#[derive(Debug, Clone)]
pub struct BenchmarkSuite {
    pub config: BenchConfig,
    pub seed: u64,
    pub networks: Vec<BenchNetwork>,
}

/// Network `n` uses stream `[n]`, subject `s` of it `[n, s]`.
pub fn gen_sparse_networks(
    model: &MdsModel,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<BenchmarkSuite> {
    cfg.validate()?;
    let m = model.config.m;
    let networks = (0..cfg.networks)
        .into_par_iter()
        .map(|n| {
            let a = sample_sparse_network(m, cfg, &mut substream(seed, &[n as u64]))?;
            let coupling = CouplingSet {
                matrices: vec![a; model.config.c],
            };
            let subjects = (0..cfg.subjects)
                .map(|s| {
                    simulate_with_coupling(
                        model,
                        &coupling,
                        &mut substream(seed, &[n as u64, s as u64]),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BenchNetwork {
                id: n,
                coupling,
                subjects,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkSuite {
        config: cfg.clone(),
        seed,
        networks,
    })
}

/// Off-diagonal edge labels of a matrix: present when the coefficient is non-zero.
pub fn edge_labels(a: &Matrix) -> Vec<bool> {
    off_diagonal(a).into_iter().map(|v| v != 0.0).collect()
}

/// Off-diagonal entries in row-major order.
pub fn off_diagonal(a: &Matrix) -> Vec<f64> {
    let m = a.nrows();
    let mut out = Vec::with_capacity(m * m.saturating_sub(1));
    for i in 0..m {
        for j in 0..m {
            if i != j {
                out.push(a[(i, j)]);
            }
        }
    }
    out
}
