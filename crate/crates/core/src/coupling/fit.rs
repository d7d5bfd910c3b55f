use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::elbo::{elbo_with_grad, ElboOptions};
use super::hyper::{HpContext, HyperPosterior};
use super::regressor::{GaussianPosteriorP, HyperRegressor, RegressorMode};
use crate::error::{config_err, dim_err, Error, Result};
use crate::model::{CouplingSet, HyperParams, MdsModel, ModelConfig, ObservedSignal};
use crate::nn::{self, clip_grad_norm, Adam, AdamConfig, CosineSchedule};
use crate::rng::{substream, Rng};

fn d_steps() -> usize {
    2000
}
fn d_s_hp() -> usize {
    8
}
fn d_s_p() -> usize {
    1
}
fn d_lr() -> f64 {
    1e-3
}
fn d_floor() -> f64 {
    0.05
}
fn d_clip() -> f64 {
    10.0
}
fn d_std_x() -> f64 {
    -2.0
}
fn d_std_a() -> f64 {
    -3.0
}

/// Settings of the reverse-KL fit (shared by the baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub seed: u64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    /// Hyper-parameter draws per step.
    #[serde(default = "d_s_hp")]
    pub s_hp: usize,
    /// `(X, A)` draws per hyper-parameter draw.
    #[serde(default = "d_s_p")]
    pub s_p: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_floor")]
    pub lr_floor: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub regressor: RegressorMode,
    #[serde(default = "d_std_x")]
    pub init_log_std_x: f64,
    #[serde(default = "d_std_a")]
    pub init_log_std_a: f64,
}

impl FitConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            steps: d_steps(),
            s_hp: d_s_hp(),
            s_p: d_s_p(),
            lr: d_lr(),
            lr_floor: d_floor(),
            clip_norm: d_clip(),
            regressor: RegressorMode::default(),
            init_log_std_x: d_std_x(),
            init_log_std_a: d_std_a(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.s_hp == 0 || self.s_p == 0 {
            return Err(config_err("steps, s_hp and s_p must be positive"));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) || !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(config_err(
                "lr and clip_norm must be positive, lr_floor in [0, 1]",
            ));
        }
        if let RegressorMode::Amortized { hidden } = &self.regressor {
            if hidden.contains(&0) {
                return Err(config_err("regressor hidden widths must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub step: usize,
    pub elbo: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitLog {
    pub rows: Vec<FitRow>,
}

impl FitLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "elbo", "wall_time"])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                format!("{:?}", r.elbo),
                format!("{:.6}", r.wall_time),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Moving average of the ELBO over `window` steps (trailing, full windows only).
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let v: Vec<f64> = self.rows.iter().map(|r| r.elbo).collect();
        v.windows(window.max(1))
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect()
    }
}

/// Trained regressor for one dataset.
#[derive(Debug, Clone)]
pub struct FittedCoupling {
    pub regressor: HyperRegressor,
    pub weights: Vec<f64>,
    pub config: FitConfig,
    pub model: ModelConfig,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorManifest {
    pub format: String,
    pub model: ModelConfig,
    pub config: FitConfig,
    pub steps: usize,
    pub n_params: usize,
    pub checksum: String,
    pub weight_order: String,
}

pub const POSTERIOR_WEIGHT_ORDER: &str = "amortized: dense layers in order, each weights [out][in] row-major then bias; \
direct: the output vector itself. Outputs are [mean_x (M*T, node-major), log_std_x, mean_a (C*M*M, row-major \
per condition), log_std_a]; inputs are (alpha_m / (pi/4), standardized log q_m, standardized log r_m); little-endian f64";

impl FittedCoupling {
    pub fn posterior(&self, h: &HyperParams) -> GaussianPosteriorP {
        self.regressor.posterior(&self.weights, h)
    }

    pub fn manifest(&self) -> PosteriorManifest {
        PosteriorManifest {
            format: "netcoupler-coupling-v1".into(),
            model: self.model.clone(),
            config: self.config.clone(),
            steps: self.steps,
            n_params: self.weights.len(),
            checksum: nn::checksum(&self.weights),
            weight_order: POSTERIOR_WEIGHT_ORDER.into(),
        }
    }

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
        let man: PosteriorManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let weights = nn::from_le_bytes(&fs::read(dir.join(format!("{stem}.bin")))?)?;
        if nn::checksum(&weights) != man.checksum {
            return Err(Error::Format("posterior weight checksum mismatch".into()));
        }
        let regressor = HyperRegressor::new(man.config.regressor.clone(), &man.model);
        if regressor.n_params != weights.len() {
            return Err(Error::Format(
                "posterior weight count does not match the architecture".into(),
            ));
        }
        Ok(Self {
            regressor,
            weights,
            config: man.config,
            model: man.model,
            steps: man.steps,
        })
    }
}

/// Draws processed sequentially per parallel task; fixes the summation order.
const CHUNK: usize = 4;

/// Mean ELBO and its gradient with respect to the regressor weights over
/// `s_hp` fresh hyper-parameter draws; one optimizer step of the fit.
#[allow(clippy::too_many_arguments)]
pub fn mean_elbo_gradient(
    model: &MdsModel,
    signal: &ObservedSignal,
    hp: &dyn HyperPosterior,
    ctx: &HpContext,
    reg: &HyperRegressor,
    p: &[f64],
    config: &FitConfig,
    fixed: Option<&CouplingSet>,
    step: usize,
) -> Result<(f64, Vec<f64>)> {
    let idx: Vec<usize> = (0..config.s_hp).collect();
    let parts: Vec<Result<(f64, Vec<f64>)>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; reg.n_params];
            let mut total = 0.0;
            for &j in chunk {
                let mut rng: Rng = substream(config.seed, &[2, step as u64, j as u64]);
                let draw = hp.draw(ctx, &mut rng);
                let opts = ElboOptions {
                    s_p: config.s_p,
                    fixed_coupling: fixed,
                    step,
                };
                total +=
                    elbo_with_grad(model, signal, &draw, reg, p, opts, &mut rng, Some(&mut g))?;
            }
            Ok((total, g))
        })
        .collect();
    let mut grad = vec![0.0; reg.n_params];
    let mut total = 0.0;
    for part in parts {
        let (v, g) = part?;
        total += v;
        nn::add_assign(&mut grad, &g);
    }
    let n = config.s_hp as f64;
    nn::scale(&mut grad, 1.0 / n);
    Ok((total / n, grad))
}

/// Stochastic ascent on the ELBO averaged over hyper-parameter draws. The
/// hyper-parameter posterior is only read; its fingerprint is checked before
/// and after.
pub fn fit_parameters(
    model: &MdsModel,
    signal: &ObservedSignal,
    hp: &dyn HyperPosterior,
    config: &FitConfig,
    checkpoint: Option<&Path>,
) -> Result<(FittedCoupling, FitLog)> {
    fit_parameters_with(model, signal, hp, config, None, checkpoint)
}

/// As [`fit_parameters`], optionally with the couplings held fixed.
pub fn fit_parameters_with(
    model: &MdsModel,
    signal: &ObservedSignal,
    hp: &dyn HyperPosterior,
    config: &FitConfig,
    fixed: Option<&CouplingSet>,
    checkpoint: Option<&Path>,
) -> Result<(FittedCoupling, FitLog)> {
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
    let before = hp.fingerprint();
    let ctx = hp.condition(signal)?;
    let reg = HyperRegressor::new(config.regressor.clone(), cfg);
    let mut weights = reg.init(
        &mut substream(config.seed, &[0]),
        config.init_log_std_x,
        config.init_log_std_a,
    );
    let mut opt = Adam::new(
        reg.n_params,
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
    let mut log = FitLog::default();
    let start = Instant::now();
    for step in 0..config.steps {
        let res = mean_elbo_gradient(model, signal, hp, &ctx, &reg, &weights, config, fixed, step);
        let (elbo, mut grad) = match res {
            Ok((e, g)) if e.is_finite() && g.iter().all(|v| v.is_finite()) => (e, g),
            other => {
                let detail = match other {
                    Err(e) => e.to_string(),
                    Ok((e, _)) => format!("non-finite ELBO {e}"),
                };
                let fitted = FittedCoupling {
                    regressor: reg,
                    weights,
                    config: config.clone(),
                    model: cfg.clone(),
                    steps: step,
                };
                let path = save_checkpoint(&fitted, checkpoint)?;
                return Err(Error::Aborted {
                    step,
                    detail,
                    checkpoint: path,
                });
            }
        };
        nn::scale(&mut grad, -1.0);
        clip_grad_norm(&mut grad, config.clip_norm);
        opt.step(&mut weights, &grad, sched.at(step));
        log.rows.push(FitRow {
            step,
            elbo,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    if hp.fingerprint() != before {
        return Err(Error::Domain(
            "hyper-parameter posterior changed during the fit".into(),
        ));
    }
    let fitted = FittedCoupling {
        regressor: reg,
        weights,
        config: config.clone(),
        model: cfg.clone(),
        steps: config.steps,
    };
    Ok((fitted, log))
}

fn save_checkpoint(fitted: &FittedCoupling, dir: Option<&Path>) -> Result<Option<PathBuf>> {
    match dir {
        None => Ok(None),
        Some(d) => {
            fitted.save(d, "coupling_last_good")?;
            Ok(Some(d.join("coupling_last_good.json")))
        }
    }
}
