use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderArch};
use super::flow::{ConditionalFlow, FlowArch, DIM};
use super::train::FaviTrainConfig;
use crate::error::{Error, Result};
use crate::model::rf::alpha_in_support;
use crate::nn::{self, ParamLayout};
use crate::rng::Rng;

/// Measurement hyper-parameters of a single region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionHyper {
    pub alpha: f64,
    pub q: f64,
    pub r: f64,
}

impl RegionHyper {
    pub fn in_support(&self) -> bool {
        alpha_in_support(self.alpha)
            && self.q > 0.0
            && self.r > 0.0
            && self.q.is_finite()
            && self.r.is_finite()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log sigmoid(x)`, stable for large |x|.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Unconstrained coordinates `(alpha_tilde, log q, log r)`; `None` outside
/// the support.
pub fn to_unconstrained(h: &RegionHyper) -> Option<[f64; DIM]> {
    if !h.in_support() {
        return None;
    }
    let p = h.alpha / FRAC_PI_2 + 0.5;
    Some([(p / (1.0 - p)).ln(), h.q.ln(), h.r.ln()])
}

pub fn from_unconstrained(u: &[f64; DIM]) -> RegionHyper {
    RegionHyper {
        alpha: FRAC_PI_2 * (sigmoid(u[0]) - 0.5),
        q: u[1].exp(),
        r: u[2].exp(),
    }
}

/// `log |d theta / d theta_tilde|` of the output bijection.
pub fn log_jacobian(u: &[f64; DIM]) -> f64 {
    FRAC_PI_2.ln() + log_sigmoid(u[0]) + log_sigmoid(-u[0]) + u[1] + u[2]
}

/// Full network architecture of the hyper-parameter estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaviArch {
    pub encoder: EncoderArch,
    pub flow: FlowArch,
}

impl Default for FaviArch {
    fn default() -> Self {
        Self {
            encoder: EncoderArch::default(),
            flow: FlowArch::default(),
        }
    }
}

/// Network structure with offsets into a weight buffer; no weights.
#[derive(Debug, Clone)]
pub struct FaviNet {
    pub arch: FaviArch,
    pub encoder: Encoder,
    pub flow: ConditionalFlow,
    pub n_params: usize,
}

impl FaviNet {
    pub fn new(arch: FaviArch) -> Result<Self> {
        arch.encoder.validate()?;
        if arch.flow.depth == 0 || arch.flow.hidden < DIM {
            return Err(Error::Config(
                "flow needs depth >= 1 and at least 3 hidden units".into(),
            ));
        }
        let mut layout = ParamLayout::default();
        let encoder = Encoder::new(&mut layout, arch.encoder.clone());
        let flow = ConditionalFlow::new(&mut layout, arch.flow.clone(), arch.encoder.embedding_dim);
        Ok(Self {
            arch,
            encoder,
            flow,
            n_params: layout.len(),
        })
    }

    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        self.encoder.init(&mut p, rng);
        self.flow.init_identity(&mut p, rng);
        p
    }

    pub fn log_prob(&self, p: &[f64], theta: &RegionHyper, embedding: &[f64]) -> f64 {
        match to_unconstrained(theta) {
            None => f64::NEG_INFINITY,
            Some(u) => self.flow.log_prob(p, &u, embedding) - log_jacobian(&u),
        }
    }

    /// Negative log-probability of one pair and its gradient (accumulated).
    pub fn pair_loss_grad(
        &self,
        p: &[f64],
        theta: &RegionHyper,
        y: &[f64],
        grad: &mut [f64],
    ) -> Result<f64> {
        let u = to_unconstrained(theta)
            .ok_or_else(|| Error::Domain(format!("training target {theta:?} outside support")))?;
        let enc = self.encoder.forward(p, y)?;
        let fc = self.flow.forward(p, &u, &enc.embedding);
        let mut g_emb = vec![0.0; enc.embedding.len()];
        self.flow.backward(p, &fc, -1.0, grad, &mut g_emb);
        self.encoder.backward(p, &enc, &g_emb, grad);
        Ok(-(fc.log_prob - log_jacobian(&u)))
    }

    /// Mean negative log-probability over a batch, and its gradient. Pairs are
    /// reduced in fixed chunks so the result does not depend on thread count.
    pub fn batch_loss_grad(
        &self,
        p: &[f64],
        batch: &[(RegionHyper, Vec<f64>)],
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Config("empty FAVI batch".into()));
        }
        const CHUNK: usize = 4;
        let parts: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; self.n_params];
                let mut loss = 0.0;
                for (theta, y) in chunk {
                    loss += self.pair_loss_grad(p, theta, y, &mut g)?;
                }
                Ok((loss, g))
            })
            .collect();
        let mut grad = vec![0.0; self.n_params];
        let mut loss = 0.0;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            nn::add_assign(&mut grad, &g);
        }
        let n = batch.len() as f64;
        nn::scale(&mut grad, 1.0 / n);
        Ok((loss / n, grad))
    }
}

/// Trained amortized posterior over per-region `(alpha, q, r)`. Immutable:
/// no method mutates the weights.
#[derive(Debug, Clone)]
pub struct HpEstimator {
    net: FaviNet,
    weights: Vec<f64>,
    config: FaviTrainConfig,
    steps: usize,
}

/// JSON manifest stored next to the weight blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub architecture: FaviArch,
    pub config: FaviTrainConfig,
    pub seed: u64,
    pub steps: usize,
    pub n_params: usize,
    pub checksum: String,
    pub weight_order: String,
}

pub const WEIGHT_ORDER: &str = "encoder convolutions in order (weights [out][in][width], then bias [out]); \
encoder head over [pooled channels, mean, ln std, ln rms] (weights [out][in] row-major, then bias); flow layers in order, each: hidden masked dense \
layers (weights [out][in], bias), then output projection (weights [2*3][hidden], bias) with rows \
[shift_0..shift_2, log_scale_0..log_scale_2]; all little-endian f64";

impl HpEstimator {
    pub fn new(
        net: FaviNet,
        weights: Vec<f64>,
        config: FaviTrainConfig,
        steps: usize,
    ) -> Result<Self> {
        if weights.len() != net.n_params {
            return Err(Error::Format(format!(
                "expected {} weights, got {}",
                net.n_params,
                weights.len()
            )));
        }
        Ok(Self {
            net,
            weights,
            config,
            steps,
        })
    }

    pub fn net(&self) -> &FaviNet {
        &self.net
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn config(&self) -> &FaviTrainConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn checksum(&self) -> String {
        nn::checksum(&self.weights)
    }

    /// Embedding of one region's signal.
    pub fn encode(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.net.encoder.encode(&self.weights, y)
    }

    /// Exact log-density of `theta` (constrained space) under the flow
    /// conditioned on `embedding`; `-inf` outside the support.
    pub fn flow_log_prob(&self, theta: &RegionHyper, embedding: &[f64]) -> f64 {
        self.net.log_prob(&self.weights, theta, embedding)
    }

    /// `n` draws with their log-densities.
    pub fn flow_sample(
        &self,
        embedding: &[f64],
        n: usize,
        rng: &mut Rng,
    ) -> Vec<(RegionHyper, f64)> {
        (0..n)
            .map(|_| {
                let (u, lp) = self.net.flow.sample(&self.weights, embedding, rng);
                (from_unconstrained(&u), lp - log_jacobian(&u))
            })
            .collect()
    }

    /// Draws in unconstrained coordinates (before the output bijection).
    pub fn flow_sample_unconstrained(
        &self,
        embedding: &[f64],
        n: usize,
        rng: &mut Rng,
    ) -> Vec<[f64; DIM]> {
        (0..n)
            .map(|_| self.net.flow.sample(&self.weights, embedding, rng).0)
            .collect()
    }

    /// Mean over the batch of `-log q(theta | encode(y))`. Any `-inf`
    /// log-probability yields `+inf`.
    pub fn favi_loss(&self, batch: &[(RegionHyper, Vec<f64>)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty FAVI batch".into()));
        }
        let mut total = 0.0;
        for (theta, y) in batch {
            let e = self.encode(y)?;
            let lp = self.flow_log_prob(theta, &e);
            if lp == f64::NEG_INFINITY {
                return Ok(f64::INFINITY);
            }
            total -= lp;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format: "netcoupler-favi-v1".into(),
            architecture: self.net.arch.clone(),
            config: self.config.clone(),
            seed: self.config.seed,
            steps: self.steps,
            n_params: self.weights.len(),
            checksum: self.checksum(),
            weight_order: WEIGHT_ORDER.into(),
        }
    }

    /// Writes `<stem>.json` and `<stem>.bin` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.manifest())?,
        )?;
        fs::write(
            dir.join(format!("{stem}.bin")),
            nn::to_le_bytes(&self.weights),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let weights = nn::from_le_bytes(&fs::read(dir.join(format!("{stem}.bin")))?)?;
        if nn::checksum(&weights) != manifest.checksum {
            return Err(Error::Format(
                "weight blob checksum does not match manifest".into(),
            ));
        }
        let net = FaviNet::new(manifest.architecture)?;
        Self::new(net, weights, manifest.config, manifest.steps)
    }
}
