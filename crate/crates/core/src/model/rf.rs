//! Response-function basis and per-region kernels.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::config::{ModelConfig, ALPHA_BOUND};
use crate::error::{config_err, domain_err, Result};

/// Functional form of the base kernel before peak normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelShape {
    /// Difference of two gamma densities evaluated at `k * dt` seconds:
    /// `g(t; peak_shape) - undershoot_ratio * g(t; undershoot_shape)`.
    DoubleGamma {
        peak_shape: f64,
        undershoot_shape: f64,
        undershoot_ratio: f64,
    },
    /// Discrete impulse at lag 0.
    Delta,
    /// Arbitrary user kernel; truncated or zero-extended to K.
    Custom(Vec<f64>),
}

impl Default for KernelShape {
    fn default() -> Self {
        KernelShape::DoubleGamma {
            peak_shape: 6.0,
            undershoot_shape: 16.0,
            undershoot_ratio: 1.0 / 6.0,
        }
    }
}

/// Unit-rate gamma density.
pub fn gamma_pdf(t: f64, shape: f64) -> f64 {
    if t <= 0.0 {
        return if shape == 1.0 && t == 0.0 { 1.0 } else { 0.0 };
    }
    ((shape - 1.0) * t.ln() - t - ln_gamma(shape)).exp()
}

/// Base kernel `h0` and its discrete time derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfBasis {
    pub h0: Vec<f64>,
    pub h0dot: Vec<f64>,
    pub dt: f64,
}

impl RfBasis {
    pub fn len(&self) -> usize {
        self.h0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h0.is_empty()
    }

    /// Realized kernel `cos(alpha) h0 + sin(alpha) h0dot`, no range check.
    pub fn kernel_unchecked(&self, alpha: f64) -> Vec<f64> {
        let (s, c) = alpha.sin_cos();
        self.h0
            .iter()
            .zip(&self.h0dot)
            .map(|(a, b)| c * a + s * b)
            .collect()
    }

    /// Derivative of the realized kernel with respect to `alpha`.
    pub fn kernel_derivative(&self, alpha: f64) -> Vec<f64> {
        let (s, c) = alpha.sin_cos();
        self.h0
            .iter()
            .zip(&self.h0dot)
            .map(|(a, b)| -s * a + c * b)
            .collect()
    }
}

/// Finite-difference derivative: central inside, one-sided at the ends.
pub fn finite_difference(h: &[f64], dt: f64) -> Vec<f64> {
    let k = h.len();
    (0..k)
        .map(|i| match i {
            0 => (h[1] - h[0]) / dt,
            i if i == k - 1 => (h[k - 1] - h[k - 2]) / dt,
            i => (h[i + 1] - h[i - 1]) / (2.0 * dt),
        })
        .collect()
}

pub fn make_rf_basis(config: &ModelConfig, shape: &KernelShape) -> Result<RfBasis> {
    let k = config.k;
    if k < 3 {
        return Err(config_err(format!(
            "kernel length K = {k} is too short for finite differencing (need >= 3)"
        )));
    }
    let mut h0: Vec<f64> = match shape {
        KernelShape::DoubleGamma {
            peak_shape,
            undershoot_shape,
            undershoot_ratio,
        } => (0..k)
            .map(|i| {
                let t = i as f64 * config.dt;
                gamma_pdf(t, *peak_shape) - undershoot_ratio * gamma_pdf(t, *undershoot_shape)
            })
            .collect(),
        KernelShape::Delta => {
            let mut h = vec![0.0; k];
            h[0] = 1.0;
            h
        }
        KernelShape::Custom(v) => (0..k).map(|i| v.get(i).copied().unwrap_or(0.0)).collect(),
    };
    let peak = h0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(config_err("base kernel must have a positive finite peak"));
    }
    for v in &mut h0 {
        *v /= peak;
    }
    let h0dot = finite_difference(&h0, config.dt);
    Ok(RfBasis {
        h0,
        h0dot,
        dt: config.dt,
    })
}

/// Region-specific response function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRf {
    pub alpha: f64,
    pub kernel: Vec<f64>,
}

pub fn alpha_in_support(alpha: f64) -> bool {
    alpha.is_finite() && alpha.abs() < ALPHA_BOUND
}

pub fn build_rf(alpha: f64, basis: &RfBasis) -> Result<RegionRf> {
    if !alpha_in_support(alpha) {
        return Err(domain_err(format!("alpha = {alpha} outside (-pi/4, pi/4)")));
    }
    Ok(RegionRf {
        alpha,
        kernel: basis.kernel_unchecked(alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg(k: usize, dt: f64) -> ModelConfig {
        ModelConfig {
            k,
            t: k.max(64),
            dt,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn delta_basis_derivative() {
        let dt = 0.5;
        let b = make_rf_basis(&cfg(3, dt), &KernelShape::Delta).unwrap();
        assert_eq!(b.h0, vec![1.0, 0.0, 0.0]);
        assert_eq!(b.h0dot, vec![-1.0 / dt, -1.0 / (2.0 * dt), 0.0]);
    }

    #[test]
    fn short_kernel_is_rejected() {
        assert!(make_rf_basis(&cfg(2, 1.0), &KernelShape::Delta).is_err());
    }

    #[test]
    fn double_gamma_peak_location() {
        let b = make_rf_basis(&cfg(32, 1.0), &KernelShape::default()).unwrap();
        let argmax = argmax(&b.h0);
        // Independent scalar evaluation of the closed form on a fine grid.
        let dense = |t: f64| {
            let g = |a: f64| t.powf(a - 1.0) * (-t).exp() / statrs::function::gamma::gamma(a);
            g(6.0) - g(16.0) / 6.0
        };
        let fine_peak = (1..3200)
            .map(|i| i as f64 * 0.01)
            .fold((0.0, f64::MIN), |acc, t| {
                let v = dense(t);
                if v > acc.1 {
                    (t, v)
                } else {
                    acc
                }
            });
        assert!((5..=6).contains(&argmax), "argmax {argmax}");
        assert!(
            (fine_peak.0 - argmax as f64).abs() <= 1.0,
            "continuous peak {}",
            fine_peak.0
        );
        assert!((b.h0.iter().cloned().fold(f64::MIN, f64::max) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn custom_kernel_is_peak_normalized() {
        let b = make_rf_basis(&cfg(4, 1.0), &KernelShape::Custom(vec![0.5, 2.0, 1.0])).unwrap();
        assert_eq!(b.h0, vec![0.25, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn build_rf_formula_and_support() {
        let b = make_rf_basis(&cfg(32, 1.0), &KernelShape::default()).unwrap();
        assert_eq!(build_rf(0.0, &b).unwrap().kernel, b.h0);
        let a = PI / 8.0;
        let rf = build_rf(a, &b).unwrap();
        for i in 0..b.len() {
            assert_eq!(rf.kernel[i], a.cos() * b.h0[i] + a.sin() * b.h0dot[i]);
        }
        assert!(build_rf(PI / 4.0, &b).is_err());
        assert!(build_rf(-PI / 4.0, &b).is_err());
        assert!(build_rf(f64::NAN, &b).is_err());
    }

    #[test]
    fn kernel_peak_moves_monotonically_with_alpha() {
        let b = make_rf_basis(&cfg(32, 1.0), &KernelShape::default()).unwrap();
        let peaks: Vec<usize> = (1..40)
            .map(|i| -PI / 4.0 + i as f64 * (PI / 2.0) / 40.0)
            .map(|a| argmax(&build_rf(a, &b).unwrap().kernel))
            .collect();
        assert!(peaks.windows(2).all(|w| w[1] <= w[0]), "{peaks:?}");
        assert!(peaks.first() > peaks.last());
    }

    #[test]
    fn symmetric_angles_sum_to_scaled_base() {
        let b = make_rf_basis(&cfg(16, 0.72), &KernelShape::default()).unwrap();
        for a in [0.1, 0.3, 0.7] {
            let p = build_rf(a, &b).unwrap().kernel;
            let n = build_rf(-a, &b).unwrap().kernel;
            for i in 0..b.len() {
                assert!((p[i] + n[i] - 2.0 * a.cos() * b.h0[i]).abs() < 1e-14);
            }
        }
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
    }
}
