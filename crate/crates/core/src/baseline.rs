//! Monolithic reverse-KL baseline: one mean-field Gaussian family over the
//! latent trajectory, couplings, log-noise levels and a sigmoid-mapped angle
//! per region, all fitted jointly by maximizing the ELBO.
//!
//! The angle family covers `(-pi/2, pi/2)` while the prior lives on
//! `(-pi/4, pi/4)`. To keep reparameterized gradients defined, the log prior
//! outside its support is continued by a steep quadratic barrier.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::elbo::offending_term;
use crate::coupling::{CouplingMixture, FitConfig, FitLog, FitRow};
use crate::error::{dim_err, Error, Result};
use crate::model::density::log_joint_grad_free_alpha;
use crate::model::{
    log_joint_terms, CouplingSet, HyperParams, JointPoint, Matrix, MdsModel, ModelConfig,
    ObservedSignal,
};
use crate::nn::{self, clip_grad_norm, Adam, AdamConfig, CosineSchedule};
use crate::rng::{substream, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Curvature of the angle-prior continuation outside `(-pi/4, pi/4)`.
pub const ALPHA_BARRIER: f64 = 1e4;

/// Largest representable angle strictly below `pi/2`.
const ALPHA_MAX: f64 = FRAC_PI_2 * (1.0 - f64::EPSILON);

/// `alpha = pi * (sigmoid(z) - 1/2)`.
pub fn soft_clip(z: f64) -> f64 {
    (FRAC_PI_2 * (0.5 * z).tanh()).clamp(-ALPHA_MAX, ALPHA_MAX)
}

fn sigmoid(x: f64) -> f64 {
    0.5 * (1.0 + (0.5 * x).tanh())
}

/// Log of the angle prior and its derivative, continued outside the support.
fn alpha_prior(alpha: f64) -> (f64, f64) {
    let base = -(FRAC_PI_2).ln();
    let excess = alpha.abs() - FRAC_PI_4;
    if excess < 0.0 {
        (base, 0.0)
    } else {
        (
            base - ALPHA_BARRIER * excess * excess,
            -2.0 * ALPHA_BARRIER * excess * alpha.signum(),
        )
    }
}

/// Offsets of each block in the flat variational parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineLayout {
    pub m: usize,
    pub t: usize,
    pub c: usize,
}

impl BaselineLayout {
    fn nx(&self) -> usize {
        self.m * self.t
    }
    fn na(&self) -> usize {
        self.c * self.m * self.m
    }
    pub fn mean_x(&self) -> Range<usize> {
        0..self.nx()
    }
    pub fn log_std_x(&self) -> Range<usize> {
        self.nx()..2 * self.nx()
    }
    pub fn mean_a(&self) -> Range<usize> {
        let s = 2 * self.nx();
        s..s + self.na()
    }
    pub fn log_std_a(&self) -> Range<usize> {
        let s = 2 * self.nx() + self.na();
        s..s + self.na()
    }
    /// Block `k` of the per-region hyper-parameter moments: 0 mean log q,
    /// 1 log std log q, 2 mean log r, 3 log std log r, 4 mean z, 5 log std z.
    pub fn hyper(&self, k: usize) -> Range<usize> {
        let s = 2 * (self.nx() + self.na()) + k * self.m;
        s..s + self.m
    }
    pub fn len(&self) -> usize {
        2 * (self.nx() + self.na()) + 6 * self.m
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fitted mean-field posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePosterior {
    pub layout: BaselineLayout,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineManifest {
    pub format: String,
    pub model: ModelConfig,
    pub config: FitConfig,
    pub posterior: BaselinePosterior,
}

impl BaselinePosterior {
    fn block(&self, r: Range<usize>) -> &[f64] {
        &self.params[r]
    }

    pub fn mean_x(&self) -> Matrix {
        Matrix::from_row_slice(
            self.layout.m,
            self.layout.t,
            self.block(self.layout.mean_x()),
        )
    }

    /// Single-component coupling posterior.
    pub fn coupling_mixture(&self) -> CouplingMixture {
        let l = self.layout;
        let means = self.block(l.mean_a()).to_vec();
        let stds = self.block(l.log_std_a()).iter().map(|s| s.exp()).collect();
        CouplingMixture::new(l.c, l.m, vec![means], vec![stds]).expect("consistent baseline layout")
    }

    /// `n` draws of region `m`'s angle.
    pub fn alpha_samples(&self, m: usize, n: usize, rng: &mut Rng) -> Vec<f64> {
        let mu = self.block(self.layout.hyper(4))[m];
        let sd = self.block(self.layout.hyper(5))[m].exp();
        (0..n)
            .map(|_| soft_clip(mu + sd * rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    /// Log-normal parameters `(mu, sigma)` of `q_m` and `r_m`.
    pub fn noise_lognormal(&self, m: usize) -> ((f64, f64), (f64, f64)) {
        let g = |k: usize| self.block(self.layout.hyper(k))[m];
        ((g(0), g(1).exp()), (g(2), g(3).exp()))
    }

    pub fn save(
        &self,
        dir: &Path,
        stem: &str,
        model: &ModelConfig,
        config: &FitConfig,
    ) -> Result<()> {
        fs::create_dir_all(dir)?;
        let man = BaselineManifest {
            format: "netcoupler-baseline-v1".into(),
            model: model.clone(),
            config: config.clone(),
            posterior: self.clone(),
        };
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&man)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<BaselineManifest> {
        Ok(serde_json::from_str(&fs::read_to_string(
            dir.join(format!("{stem}.json")),
        )?)?)
    }
}

/// Initial moments: zero means for `X` and `A`, hyper-parameters at the
/// prior location and angle centred at 0.
pub fn init_params(model: &ModelConfig, config: &FitConfig) -> BaselinePosterior {
    let layout = BaselineLayout {
        m: model.m,
        t: model.t,
        c: model.c,
    };
    let mut p = vec![0.0; layout.len()];
    p[layout.log_std_x()].fill(config.init_log_std_x);
    p[layout.log_std_a()].fill(config.init_log_std_a);
    p[layout.hyper(0)].fill(model.lognormal_mu_q);
    p[layout.hyper(1)].fill((0.5 * model.lognormal_sigma_q).ln());
    p[layout.hyper(2)].fill(model.lognormal_mu_r);
    p[layout.hyper(3)].fill((0.5 * model.lognormal_sigma_r).ln());
    p[layout.hyper(5)].fill(0.5f64.ln());
    BaselinePosterior { layout, params: p }
}

/// One reparameterized ELBO sample and its gradient (ascent direction).
pub fn baseline_elbo_sample(
    model: &MdsModel,
    signal: &ObservedSignal,
    post: &BaselinePosterior,
    rng: &mut Rng,
    grad: &mut [f64],
    step: usize,
) -> Result<f64> {
    let l = post.layout;
    let (m, t) = (l.m, l.t);
    let p = &post.params;
    let mut draw = |mu: f64, ls: f64| {
        let e: f64 = rng.sample(StandardNormal);
        (mu + ls.exp() * e, e)
    };
    let (mx, sx) = (l.mean_x().start, l.log_std_x().start);
    let mut eps_x = vec![0.0; l.nx()];
    let mut x = Matrix::zeros(m, t);
    for i in 0..m {
        for tt in 0..t {
            let k = i * t + tt;
            let (v, e) = draw(p[mx + k], p[sx + k]);
            x[(i, tt)] = v;
            eps_x[k] = e;
        }
    }
    let (ma, sa) = (l.mean_a().start, l.log_std_a().start);
    let mut eps_a = vec![0.0; l.na()];
    let mut flat_a = vec![0.0; l.na()];
    for k in 0..l.na() {
        let (v, e) = draw(p[ma + k], p[sa + k]);
        flat_a[k] = v;
        eps_a[k] = e;
    }
    let coupling = CouplingSet::from_flat(l.c, m, &flat_a)?;
    let mut hyper = HyperParams {
        alpha: vec![0.0; m],
        q: vec![0.0; m],
        r: vec![0.0; m],
    };
    let mut eps_h = vec![[0.0; 3]; m];
    let mut raw = vec![[0.0; 3]; m];
    for i in 0..m {
        for (j, blk) in [0usize, 2, 4].into_iter().enumerate() {
            let (v, e) = draw(p[l.hyper(blk).start + i], p[l.hyper(blk + 1).start + i]);
            raw[i][j] = v;
            eps_h[i][j] = e;
        }
        hyper.q[i] = raw[i][0].exp();
        hyper.r[i] = raw[i][1].exp();
        hyper.alpha[i] = soft_clip(raw[i][2]);
    }
    let point = JointPoint {
        x: &x,
        coupling: &coupling,
        hyper: &hyper,
    };
    let Some((terms, g)) = log_joint_grad_free_alpha(model, signal, point) else {
        return Err(Error::NonFinite {
            term: offending_term(log_joint_terms(model, signal, point)),
            step,
        });
    };
    let mut value = terms.total();
    let mut g_raw = vec![[0.0; 3]; m];
    for i in 0..m {
        let (lp, dlp) = alpha_prior(hyper.alpha[i]);
        let s = sigmoid(raw[i][2]);
        let dalpha = PI * s * (1.0 - s);
        // Jacobians of q = exp, r = exp and the angle map.
        value += lp + raw[i][0] + raw[i][1] + dalpha.ln();
        g_raw[i] = [
            g.log_q[i] + 1.0,
            g.log_r[i] + 1.0,
            (g.alpha[i] + dlp) * dalpha + (1.0 - 2.0 * s),
        ];
    }
    if !value.is_finite() {
        return Err(Error::NonFinite {
            term: offending_term(log_joint_terms(model, signal, point)),
            step,
        });
    }
    let mut entropy = 0.5 * l.len() as f64 / 2.0 * (1.0 + LN_2PI);
    for k in l
        .log_std_x()
        .chain(l.log_std_a())
        .chain(l.hyper(1))
        .chain(l.hyper(3))
        .chain(l.hyper(5))
    {
        entropy += p[k];
        grad[k] += 1.0;
    }
    for i in 0..m {
        for tt in 0..t {
            let k = i * t + tt;
            let gx = g.x[(i, tt)];
            grad[mx + k] += gx;
            grad[sx + k] += gx * p[sx + k].exp() * eps_x[k];
        }
    }
    for ci in 0..l.c {
        for r in 0..m {
            for s in 0..m {
                let k = (ci * m + r) * m + s;
                let ga = g.a[ci][(r, s)];
                grad[ma + k] += ga;
                grad[sa + k] += ga * p[sa + k].exp() * eps_a[k];
            }
        }
    }
    for i in 0..m {
        for (j, blk) in [0usize, 2, 4].into_iter().enumerate() {
            let mu_k = l.hyper(blk).start + i;
            let ls_k = l.hyper(blk + 1).start + i;
            grad[mu_k] += g_raw[i][j];
            grad[ls_k] += g_raw[i][j] * p[ls_k].exp() * eps_h[i][j];
        }
    }
    Ok(value + entropy)
}

/// Fits the baseline with the same optimizer settings as the coupling fit.
/// Each step averages `s_hp * s_p` reparameterized draws.
pub fn fit_baseline(
    model: &MdsModel,
    signal: &ObservedSignal,
    config: &FitConfig,
    checkpoint: Option<&Path>,
) -> Result<(BaselinePosterior, FitLog)> {
    config.validate()?;
    let cfg = &model.config;
    if signal.y.shape() != (cfg.m, cfg.t) {
        return Err(dim_err(format!(
            "signal is {:?}, model expects ({}, {})",
            signal.y.shape(),
            cfg.m,
            cfg.t
        )));
    }
    let mut post = init_params(cfg, config);
    let n = post.params.len();
    let mut opt = Adam::new(
        n,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let sched = CosineSchedule {
        lr: config.lr,
        steps: config.steps,
        floor: config.lr_floor,
    };
    let draws = config.s_hp * config.s_p;
    let mut log = FitLog::default();
    let start = Instant::now();
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..draws).collect();
        let parts: Vec<Result<(f64, Vec<f64>)>> = idx
            .par_chunks(4)
            .map(|chunk| {
                let mut g = vec![0.0; n];
                let mut v = 0.0;
                for &j in chunk {
                    let mut rng = substream(config.seed, &[3, step as u64, j as u64]);
                    v += baseline_elbo_sample(model, signal, &post, &mut rng, &mut g, step)?;
                }
                Ok((v, g))
            })
            .collect();
        let mut grad = vec![0.0; n];
        let mut elbo = 0.0;
        let mut failure = None;
        for part in parts {
            match part {
                Ok((v, g)) => {
                    elbo += v;
                    nn::add_assign(&mut grad, &g);
                }
                Err(e) => failure = Some(e.to_string()),
            }
        }
        elbo /= draws as f64;
        if failure.is_some() || !elbo.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let path = match checkpoint {
                Some(dir) => {
                    post.save(dir, "baseline_last_good", cfg, config)?;
                    Some(dir.join("baseline_last_good.json"))
                }
                None => None::<PathBuf>,
            };
            let detail = failure.unwrap_or_else(|| format!("non-finite ELBO {elbo}"));
            return Err(Error::Aborted {
                step,
                detail,
                checkpoint: path,
            });
        }
        nn::scale(&mut grad, -1.0 / draws as f64);
        clip_grad_norm(&mut grad, config.clip_norm);
        opt.step(&mut post.params, &grad, sched.at(step));
        log.rows.push(FitRow {
            step,
            elbo,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok((post, log))
}
