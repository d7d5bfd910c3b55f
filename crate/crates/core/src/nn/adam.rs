use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Cosine decay from `lr` to `lr * floor` over `steps`.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule {
    pub lr: f64,
    pub steps: usize,
    pub floor: f64,
}

impl CosineSchedule {
    pub fn at(&self, step: usize) -> f64 {
        let frac = (step as f64 / self.steps.max(1) as f64).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        self.lr * (self.floor + (1.0 - self.floor) * cos)
    }
}

/// Adam state for a flat parameter buffer. `step` minimizes: pass the
/// gradient of the loss (negate ELBO gradients before calling).
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(
            2,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        let sched = CosineSchedule {
            lr: 0.1,
            steps: 500,
            floor: 0.01,
        };
        for s in 0..500 {
            let g = vec![2.0 * (p[0] - 1.0), 4.0 * (p[1] + 0.5)];
            opt.step(&mut p, &g, sched.at(s));
        }
        assert!(
            (p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3,
            "{p:?}"
        );
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
    }
}
