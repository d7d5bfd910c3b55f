//! Conditional masked autoregressive flow over the unconstrained per-region
//! hyper-parameters `(alpha_tilde, log q, log r)`.
//!
//! Density direction, per layer: `u_i = (v_i - mu_i(v_<i, e)) * exp(-s_i(v_<i, e))`
//! with `log|det| = -sum_i s_i`. Consecutive layers see the coordinates in
//! reversed order. Sampling inverts each layer one coordinate at a time.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{tanh_backward, tanh_forward, Dense, ParamLayout};
use crate::rng::Rng;

pub const DIM: usize = 3;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Soft bound on per-layer log-scales: `s = S_MAX * tanh(raw / S_MAX)`.
const S_MAX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowArch {
    pub depth: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl Default for FlowArch {
    fn default() -> Self {
        Self {
            depth: 5,
            hidden: 64,
            hidden_layers: 2,
        }
    }
}

/// MADE degrees: data input `i` has degree `i + 1`, context inputs degree 0,
/// hidden unit `h` degree `h % DIM`. A unit may read from inputs whose degree
/// does not exceed its own; output `i` reads hidden units of degree `<= i`.
fn made_masks(ctx: usize, arch: &FlowArch) -> (Vec<Vec<f64>>, Vec<f64>) {
    let in_deg: Vec<usize> = (0..DIM)
        .map(|i| i + 1)
        .chain(std::iter::repeat_n(0, ctx))
        .collect();
    let hid_deg: Vec<usize> = (0..arch.hidden).map(|h| h % DIM).collect();
    let mut masks = Vec::new();
    let mut prev = in_deg;
    for _ in 0..arch.hidden_layers {
        let mut mask = vec![0.0; arch.hidden * prev.len()];
        for (h, dh) in hid_deg.iter().enumerate() {
            for (j, dj) in prev.iter().enumerate() {
                if dj <= dh {
                    mask[h * prev.len() + j] = 1.0;
                }
            }
        }
        masks.push(mask);
        prev = hid_deg.clone();
    }
    let mut out_mask = vec![0.0; 2 * DIM * prev.len()];
    for o in 0..2 * DIM {
        let dim = o % DIM;
        for (j, dj) in prev.iter().enumerate() {
            if *dj <= dim {
                out_mask[o * prev.len() + j] = 1.0;
            }
        }
    }
    (masks, out_mask)
}

#[derive(Debug, Clone)]
struct MadeLayer {
    hidden: Vec<Dense>,
    out: Dense,
}

/// Per-layer values kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    raw: [f64; DIM],
    s: [f64; DIM],
    mu: [f64; DIM],
}

impl MadeLayer {
    fn params(
        &self,
        p: &[f64],
        v: &[f64],
        ctx: &[f64],
    ) -> ([f64; DIM], [f64; DIM], [f64; DIM], Vec<Vec<f64>>, Vec<f64>) {
        let mut input = Vec::with_capacity(DIM + ctx.len());
        input.extend_from_slice(v);
        input.extend_from_slice(ctx);
        let mut hidden = Vec::with_capacity(self.hidden.len());
        let mut prev = input.clone();
        for d in &self.hidden {
            let mut h = vec![0.0; d.n_out];
            d.forward(p, &prev, &mut h);
            tanh_forward(&mut h);
            hidden.push(h.clone());
            prev = h;
        }
        let mut o = vec![0.0; 2 * DIM];
        self.out.forward(p, &prev, &mut o);
        let mut mu = [0.0; DIM];
        let mut raw = [0.0; DIM];
        let mut s = [0.0; DIM];
        for i in 0..DIM {
            mu[i] = o[i];
            raw[i] = o[DIM + i];
            s[i] = S_MAX * (raw[i] / S_MAX).tanh();
        }
        (mu, raw, s, hidden, input)
    }
}

#[derive(Debug, Clone)]
pub struct ConditionalFlow {
    pub arch: FlowArch,
    pub ctx_dim: usize,
    layers: Vec<MadeLayer>,
}

/// Forward (density-direction) pass through every layer.
#[derive(Debug, Clone)]
pub struct FlowCache {
    layers: Vec<LayerCache>,
    pub base: [f64; DIM],
    pub log_prob: f64,
}

fn reverse(v: &mut [f64; DIM]) {
    v.reverse();
}

pub fn std_normal_log_density(u: &[f64]) -> f64 {
    u.iter().map(|x| -0.5 * (LN_2PI + x * x)).sum()
}

impl ConditionalFlow {
    pub fn new(layout: &mut ParamLayout, arch: FlowArch, ctx_dim: usize) -> Self {
        let layers = (0..arch.depth)
            .map(|_| {
                let (masks, out_mask) = made_masks(ctx_dim, &arch);
                let mut n_in = DIM + ctx_dim;
                let hidden = masks
                    .into_iter()
                    .map(|mask| {
                        let d = Dense::masked(layout, n_in, arch.hidden, mask);
                        n_in = arch.hidden;
                        d
                    })
                    .collect();
                let out = Dense::masked(layout, n_in, 2 * DIM, out_mask);
                MadeLayer { hidden, out }
            })
            .collect();
        Self {
            arch,
            ctx_dim,
            layers,
        }
    }

    /// Random hidden weights with zeroed output projections, so the
    /// initialized flow is exactly the standard normal base.
    pub fn init_identity(&self, p: &mut [f64], rng: &mut Rng) {
        for l in &self.layers {
            for d in &l.hidden {
                d.init(p, 1.0, rng);
            }
            l.out.zero(p);
        }
    }

    /// Fully random init (non-identity); used by tests that need a generic flow.
    pub fn init_random(&self, p: &mut [f64], gain: f64, rng: &mut Rng) {
        for l in &self.layers {
            for d in &l.hidden {
                d.init(p, 1.0, rng);
            }
            l.out.init(p, gain, rng);
            for b in &mut p[l.out.bias_range()] {
                *b = gain * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    /// Maps an unconstrained point to base space, keeping what backward needs.
    pub fn forward(&self, p: &[f64], x: &[f64; DIM], ctx: &[f64]) -> FlowCache {
        let mut v = *x;
        let mut logdet = 0.0;
        let mut caches = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            if li > 0 {
                reverse(&mut v);
            }
            let (mu, raw, s, hidden, input) = layer.params(p, &v, ctx);
            for i in 0..DIM {
                v[i] = (v[i] - mu[i]) * (-s[i]).exp();
                logdet -= s[i];
            }
            caches.push(LayerCache {
                input,
                hidden,
                raw,
                s,
                mu,
            });
        }
        let log_prob = std_normal_log_density(&v) + logdet;
        FlowCache {
            layers: caches,
            base: v,
            log_prob,
        }
    }

    pub fn log_prob(&self, p: &[f64], x: &[f64; DIM], ctx: &[f64]) -> f64 {
        self.forward(p, x, ctx).log_prob
    }

    /// Gradient of `scale * log_prob` with respect to parameters (accumulated
    /// into `grad`) and to the context (accumulated into `g_ctx`).
    pub fn backward(
        &self,
        p: &[f64],
        cache: &FlowCache,
        scale: f64,
        grad: &mut [f64],
        g_ctx: &mut [f64],
    ) {
        let mut g: [f64; DIM] = std::array::from_fn(|i| -scale * cache.base[i]);
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let c = &cache.layers[li];
            let mut g_o = vec![0.0; 2 * DIM];
            let mut g_in = [0.0; DIM];
            for i in 0..DIM {
                let e = (-c.s[i]).exp();
                let centered = c.input[i] - c.mu[i];
                g_o[i] = -g[i] * e;
                let g_s = -g[i] * centered * e - scale;
                let th = (c.raw[i] / S_MAX).tanh();
                g_o[DIM + i] = g_s * (1.0 - th * th);
                g_in[i] = g[i] * e;
            }
            // Back through the MADE network.
            let n_hidden = layer.hidden.len();
            let last_in = if n_hidden == 0 {
                &c.input
            } else {
                &c.hidden[n_hidden - 1]
            };
            let mut g_h = vec![0.0; last_in.len()];
            layer.out.backward(p, last_in, &g_o, grad, Some(&mut g_h));
            for hi in (0..n_hidden).rev() {
                tanh_backward(&c.hidden[hi], &mut g_h);
                let x_in = if hi == 0 { &c.input } else { &c.hidden[hi - 1] };
                let mut g_prev = vec![0.0; x_in.len()];
                layer.hidden[hi].backward(p, x_in, &g_h, grad, Some(&mut g_prev));
                g_h = g_prev;
            }
            // g_h now spans [data dims, context].
            for i in 0..DIM {
                g_in[i] += g_h[i];
            }
            for (gc, gv) in g_ctx.iter_mut().zip(&g_h[DIM..]) {
                *gc += gv;
            }
            g = g_in;
            if li > 0 {
                reverse(&mut g);
            }
        }
    }

    /// Inverts the flow at base point `u`, returning the unconstrained sample
    /// and its log-density.
    pub fn inverse(&self, p: &[f64], u: &[f64; DIM], ctx: &[f64]) -> ([f64; DIM], f64) {
        let mut v = *u;
        let mut log_prob = std_normal_log_density(u);
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let mut x = [0.0; DIM];
            for i in 0..DIM {
                let (mu, _, s, _, _) = layer.params(p, &x, ctx);
                x[i] = v[i] * s[i].exp() + mu[i];
                if i == DIM - 1 {
                    log_prob -= s.iter().sum::<f64>();
                }
            }
            v = x;
            if li > 0 {
                reverse(&mut v);
            }
        }
        (v, log_prob)
    }

    pub fn sample(&self, p: &[f64], ctx: &[f64], rng: &mut Rng) -> ([f64; DIM], f64) {
        let u: [f64; DIM] = std::array::from_fn(|_| rng.sample(StandardNormal));
        self.inverse(p, &u, ctx)
    }
}
