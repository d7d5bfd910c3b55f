use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::model::{HyperParams, Matrix, ModelConfig, ALPHA_BOUND};
use crate::nn::{tanh_backward, tanh_forward, Dense, ParamLayout};
use crate::rng::Rng;

/// How the Gaussian moments depend on the hyper-parameter draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressorMode {
    /// Tanh perceptron from the standardized draw to all moments.
    Amortized { hidden: Vec<usize> },
    /// One free parameter per output, ignoring the draw.
    Direct,
}

impl Default for RegressorMode {
    fn default() -> Self {
        Self::Amortized {
            hidden: vec![256, 256],
        }
    }
}

/// Placement of the moments in the output vector:
/// `[mean_x (M*T, node-major), log_std_x, mean_a (C*M*M, row-major per condition), log_std_a]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputLayout {
    pub m: usize,
    pub t: usize,
    pub c: usize,
}

impl OutputLayout {
    pub fn nx(&self) -> usize {
        self.m * self.t
    }

    pub fn na(&self) -> usize {
        self.c * self.m * self.m
    }

    pub fn len(&self) -> usize {
        2 * (self.nx() + self.na())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_x(&self) -> Range<usize> {
        0..self.nx()
    }

    pub fn log_std_x(&self) -> Range<usize> {
        self.nx()..2 * self.nx()
    }

    pub fn mean_a(&self) -> Range<usize> {
        2 * self.nx()..2 * self.nx() + self.na()
    }

    pub fn log_std_a(&self) -> Range<usize> {
        2 * self.nx() + self.na()..self.len()
    }
}

/// Diagonal Gaussian over latent trajectory and couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosteriorP {
    pub mean_x: Matrix,
    pub log_std_x: Matrix,
    pub mean_a: Vec<Matrix>,
    pub log_std_a: Vec<Matrix>,
}

impl GaussianPosteriorP {
    pub fn from_outputs(layout: OutputLayout, out: &[f64]) -> Self {
        let OutputLayout { m, t, c } = layout;
        let mat_x = |r: Range<usize>| Matrix::from_row_slice(m, t, &out[r]);
        let mats_a = |r: Range<usize>| {
            out[r]
                .chunks(m * m)
                .take(c)
                .map(|ch| Matrix::from_row_slice(m, m, ch))
                .collect::<Vec<_>>()
        };
        Self {
            mean_x: mat_x(layout.mean_x()),
            log_std_x: mat_x(layout.log_std_x()),
            mean_a: mats_a(layout.mean_a()),
            log_std_a: mats_a(layout.log_std_a()),
        }
    }
}

/// Maps a hyper-parameter draw to the moments of `q(X, A | draw)`.
#[derive(Debug, Clone)]
pub struct HyperRegressor {
    pub mode: RegressorMode,
    pub layout: OutputLayout,
    pub n_params: usize,
    layers: Vec<Dense>,
    mu_q: f64,
    sigma_q: f64,
    mu_r: f64,
    sigma_r: f64,
}

/// Activations kept for the backward pass (amortized mode).
#[derive(Debug, Clone)]
pub struct RegressorCache {
    acts: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl HyperRegressor {
    pub fn new(mode: RegressorMode, model: &ModelConfig) -> Self {
        let layout = OutputLayout {
            m: model.m,
            t: model.t,
            c: model.c,
        };
        let mut lay = ParamLayout::default();
        let layers = match &mode {
            RegressorMode::Direct => {
                lay.alloc(layout.len());
                Vec::new()
            }
            RegressorMode::Amortized { hidden } => {
                let mut n_in = 3 * model.m;
                let mut layers: Vec<Dense> = hidden
                    .iter()
                    .map(|&h| {
                        let d = Dense::new(&mut lay, n_in, h);
                        n_in = h;
                        d
                    })
                    .collect();
                layers.push(Dense::new(&mut lay, n_in, layout.len()));
                layers
            }
        };
        Self {
            mode,
            layout,
            n_params: lay.len(),
            layers,
            mu_q: model.lognormal_mu_q,
            sigma_q: model.lognormal_sigma_q,
            mu_r: model.lognormal_mu_r,
            sigma_r: model.lognormal_sigma_r,
        }
    }

    /// Standardized inputs `(alpha / bound, z(log q), z(log r))` per region.
    pub fn features(&self, h: &HyperParams) -> Vec<f64> {
        let mut f: Vec<f64> = h.alpha.iter().map(|a| a / ALPHA_BOUND).collect();
        f.extend(h.q.iter().map(|q| (q.ln() - self.mu_q) / self.sigma_q));
        f.extend(h.r.iter().map(|r| (r.ln() - self.mu_r) / self.sigma_r));
        f
    }

    /// Output biases start at the given moments and output weights at zero,
    /// so the initial posterior does not depend on the draw.
    pub fn init(&self, rng: &mut Rng, init_log_std_x: f64, init_log_std_a: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let mut base = vec![0.0; self.layout.len()];
        base[self.layout.log_std_x()].fill(init_log_std_x);
        base[self.layout.log_std_a()].fill(init_log_std_a);
        match self.layers.split_last() {
            None => p.copy_from_slice(&base),
            Some((out, hidden)) => {
                for l in hidden {
                    l.init(&mut p, 1.0, rng);
                }
                out.zero(&mut p);
                p[out.bias_range()].copy_from_slice(&base);
            }
        }
        p
    }

    pub fn forward(&self, p: &[f64], h: &HyperParams) -> RegressorCache {
        if self.layers.is_empty() {
            return RegressorCache {
                acts: Vec::new(),
                output: p.to_vec(),
            };
        }
        let mut acts = vec![self.features(h)];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; l.n_out];
            l.forward(p, acts.last().expect("non-empty"), &mut out);
            if i < last {
                tanh_forward(&mut out);
                acts.push(out);
            } else {
                return RegressorCache { acts, output: out };
            }
        }
        unreachable!("regressor has an output layer")
    }

    pub fn posterior(&self, p: &[f64], h: &HyperParams) -> GaussianPosteriorP {
        GaussianPosteriorP::from_outputs(self.layout, &self.forward(p, h).output)
    }

    /// Accumulates `d L / d params` given `d L / d outputs`.
    pub fn backward(&self, p: &[f64], cache: &RegressorCache, g_out: &[f64], grad: &mut [f64]) {
        if self.layers.is_empty() {
            crate::nn::add_assign(grad, g_out);
            return;
        }
        let mut g = g_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if i == 0 {
                l.backward(p, &cache.acts[0], &g, grad, None);
            } else {
                let mut g_in = vec![0.0; l.n_in];
                l.backward(p, &cache.acts[i], &g, grad, Some(&mut g_in));
                tanh_backward(&cache.acts[i], &mut g_in);
                g = g_in;
            }
        }
    }
}
