use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Half-width of the response-angle prior support, (-pi/4, pi/4).
pub const ALPHA_BOUND: f64 = std::f64::consts::FRAC_PI_4;

/// Prior placed on each coupling coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingPrior {
    /// Laplace(0, `laplace_scale_a`), the sparsity-inducing default.
    Laplace,
    /// Zero-mean Gaussian with the given variance. Used to line fits up with
    /// closed-form ridge oracles.
    Gaussian { variance: f64 },
}

/// Dimensions and prior hyper-parameters of the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Node count.
    pub m: usize,
    /// Time steps.
    pub t: usize,
    /// Response kernel length in samples.
    pub k: usize,
    /// Number of experimental conditions.
    pub c: usize,
    /// Sampling interval (seconds).
    pub dt: f64,
    pub laplace_scale_a: f64,
    pub lognormal_mu_q: f64,
    pub lognormal_sigma_q: f64,
    pub lognormal_mu_r: f64,
    pub lognormal_sigma_r: f64,
    pub coupling_prior: CouplingPrior,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            m: 2,
            t: 300,
            k: 16,
            c: 1,
            dt: 1.0,
            laplace_scale_a: 0.1,
            lognormal_mu_q: -2.0,
            lognormal_sigma_q: 0.5,
            lognormal_mu_r: -2.0,
            lognormal_sigma_r: 0.5,
            coupling_prior: CouplingPrior::Laplace,
        }
    }
}

impl ModelConfig {
    pub fn new(m: usize, t: usize, k: usize) -> Self {
        Self {
            m,
            t,
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(config_err("M must be at least 1"));
        }
        if self.t < 2 {
            return Err(config_err("T must be at least 2"));
        }
        if self.k < 1 || self.k > self.t {
            return Err(config_err(format!(
                "K = {} must lie in [1, T = {}]",
                self.k, self.t
            )));
        }
        if self.c < 1 {
            return Err(config_err("C must be at least 1"));
        }
        let positive = [
            ("dt", self.dt),
            ("laplace_scale_a", self.laplace_scale_a),
            ("lognormal_sigma_q", self.lognormal_sigma_q),
            ("lognormal_sigma_r", self.lognormal_sigma_r),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !self.lognormal_mu_q.is_finite() || !self.lognormal_mu_r.is_finite() {
            return Err(config_err("log-normal locations must be finite"));
        }
        if let CouplingPrior::Gaussian { variance } = self.coupling_prior {
            if !(variance > 0.0) {
                return Err(config_err(
                    "Gaussian coupling prior variance must be positive",
                ));
            }
        }
        Ok(())
    }

    pub fn alpha_bound(&self) -> f64 {
        ALPHA_BOUND
    }

    /// Number of coupling coefficients across conditions, C*M*M.
    pub fn coupling_len(&self) -> usize {
        self.c * self.m * self.m
    }
}
