//! Forward-KL training loop: simulate joint draws, split them per region,
//! encode each signal, score the region's true hyper-parameters under the
//! conditioned flow and take a gradient step on encoder and flow together.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimator::{FaviArch, FaviNet, HpEstimator, RegionHyper};
use crate::error::{config_err, Error, Result};
use crate::model::{sample_dataset, KernelShape, MdsModel, ModelConfig};
use crate::nn::{clip_grad_norm, Adam, AdamConfig, CosineSchedule};
use crate::rng::{substream, Rng};

fn d_steps() -> usize {
    3000
}
fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    2e-3
}
fn d_floor() -> f64 {
    0.02
}
fn d_clip() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaviTrainConfig {
    /// Root seed; mandatory.
    pub seed: u64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    /// Simulated datasets per step; each contributes M (signal, target) pairs.
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    #[serde(default = "d_floor")]
    pub lr_floor: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub arch: FaviArch,
    #[serde(default)]
    pub kernel: KernelShape,
}

impl FaviTrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            steps: d_steps(),
            batch_size: d_batch(),
            lr: d_lr(),
            lr_floor: d_floor(),
            clip_norm: d_clip(),
            arch: FaviArch::default(),
            kernel: KernelShape::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(config_err("FAVI steps and batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) || !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(config_err(
                "FAVI lr and clip_norm must be positive, lr_floor in [0, 1]",
            ));
        }
        self.arch.encoder.validate()
    }
}

/// Source of (target, signal) training pairs.
pub trait PairStream: Sync {
    fn draw(&self, rng: &mut Rng) -> Result<Vec<(RegionHyper, Vec<f64>)>>;
}

/// Prior-predictive stream of the generative model, split per region.
pub struct ModelStream {
    pub model: MdsModel,
}

impl PairStream for ModelStream {
    fn draw(&self, rng: &mut Rng) -> Result<Vec<(RegionHyper, Vec<f64>)>> {
        let ds = sample_dataset(&self.model, rng)?;
        let h = ds.hyper();
        Ok((0..self.model.config.m)
            .map(|i| {
                (
                    RegionHyper {
                        alpha: h.alpha[i],
                        q: h.q[i],
                        r: h.r[i],
                    },
                    ds.signal.region(i),
                )
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "loss", "wall_time"])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                format!("{:?}", r.loss),
                format!("{:.6}", r.wall_time),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean loss over a window of rows.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let rows = &self.rows[range];
        rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64
    }
}

/// Trains on the generative model's prior-predictive stream.
pub fn train_favi(
    config: &FaviTrainConfig,
    model: &ModelConfig,
) -> Result<(HpEstimator, TrainLog)> {
    let model = MdsModel::new(model.clone(), config.kernel.clone())?;
    train_on_stream(config, &ModelStream { model }, None)
}

/// Generic training loop. On a non-finite loss the last finite weights are
/// written to `checkpoint` (when given) and the run aborts.
pub fn train_on_stream(
    config: &FaviTrainConfig,
    stream: &dyn PairStream,
    checkpoint: Option<&Path>,
) -> Result<(HpEstimator, TrainLog)> {
    config.validate()?;
    let net = FaviNet::new(config.arch.clone())?;
    let mut weights = net.init(&mut substream(config.seed, &[0]));
    let mut opt = Adam::new(
        net.n_params,
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
    let mut log = TrainLog::default();
    let start = Instant::now();
    for step in 0..config.steps {
        let draws: Vec<Result<Vec<(RegionHyper, Vec<f64>)>>> = (0..config.batch_size)
            .into_par_iter()
            .map(|i| stream.draw(&mut substream(config.seed, &[1, step as u64, i as u64])))
            .collect();
        let mut batch = Vec::new();
        for d in draws {
            batch.extend(d?);
        }
        let (loss, mut grad) = net.batch_loss_grad(&weights, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let checkpoint_path = match checkpoint {
                Some(dir) => {
                    HpEstimator::new(net.clone(), weights.clone(), config.clone(), step)?
                        .save(dir, "favi_last_good")?;
                    Some(dir.join("favi_last_good.json"))
                }
                None => None,
            };
            return Err(Error::Aborted {
                step,
                detail: format!("non-finite FAVI loss {loss}"),
                checkpoint: checkpoint_path,
            });
        }
        clip_grad_norm(&mut grad, config.clip_norm);
        opt.step(&mut weights, &grad, sched.at(step));
        log.rows.push(LogRow {
            step,
            loss,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok((
        HpEstimator::new(net, weights, config.clone(), config.steps)?,
        log,
    ))
}
