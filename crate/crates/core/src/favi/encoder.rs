use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::nn::{tanh_backward, tanh_forward, Conv1d, Dense, ParamLayout};
use crate::rng::Rng;

/// Temporal convolution stack: the signal is standardized to mean 0 and
/// variance 1, passed through valid-padding strided convolutions with tanh and
/// averaged over time. The linear head sees the pooled features together with
/// the standardization constants `(mean, ln std)` and the log root mean square,
/// so amplitude information survives the normalization. The last is
/// `ln std + ln(1 + mean^2 / std^2) / 2`, a second-moment summary a linear head
/// cannot rebuild from the other two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderArch {
    pub channels: Vec<usize>,
    pub width: usize,
    pub stride: usize,
    pub embedding_dim: usize,
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 32],
            width: 9,
            stride: 2,
            embedding_dim: 32,
        }
    }
}

impl EncoderArch {
    /// Shortest signal that leaves at least one position after the last
    /// convolution.
    pub fn min_len(&self) -> usize {
        self.channels
            .iter()
            .fold(1, |need, _| (need - 1) * self.stride + self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(config_err(
                "encoder needs at least one convolution with non-zero channels",
            ));
        }
        if self.width == 0 || self.stride == 0 || self.embedding_dim == 0 {
            return Err(config_err(
                "encoder width, stride and embedding_dim must be positive",
            ));
        }
        Ok(())
    }
}

/// Signal statistics appended to the pooled features.
const SUMMARIES: usize = 3;

#[derive(Debug, Clone)]
pub struct Encoder {
    pub arch: EncoderArch,
    convs: Vec<Conv1d>,
    head: Dense,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Input followed by each post-tanh activation map.
    acts: Vec<Vec<f64>>,
    lens: Vec<usize>,
    /// Pooled features followed by `mean`, `ln std` and `ln rms` of the raw signal.
    pooled: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl Encoder {
    pub fn new(layout: &mut ParamLayout, arch: EncoderArch) -> Self {
        let mut c_in = 1;
        let convs = arch
            .channels
            .iter()
            .map(|&c_out| {
                let conv = Conv1d::new(layout, c_in, c_out, arch.width, arch.stride);
                c_in = c_out;
                conv
            })
            .collect();
        let head = Dense::new(layout, c_in + SUMMARIES, arch.embedding_dim);
        Self { arch, convs, head }
    }

    pub fn init(&self, p: &mut [f64], rng: &mut Rng) {
        for c in &self.convs {
            c.init(p, 1.0, rng);
        }
        self.head.init(p, 1.0, rng);
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        let need = self.arch.min_len();
        if len < need {
            return Err(config_err(format!(
                "signal length {len} below the encoder receptive field {need}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, p: &[f64], y: &[f64]) -> Result<EncoderCache> {
        self.check_len(y.len())?;
        let (mean, std) = standardization(y);
        let scale = if std > 0.0 { 1.0 / std } else { 0.0 };
        let mut acts = vec![y.iter().map(|v| (v - mean) * scale).collect::<Vec<f64>>()];
        let mut lens = vec![y.len()];
        for conv in &self.convs {
            let len = *lens.last().expect("non-empty");
            let lo = conv.out_len(len);
            let mut out = vec![0.0; conv.c_out * lo];
            conv.forward(p, acts.last().expect("non-empty"), len, &mut out);
            tanh_forward(&mut out);
            acts.push(out);
            lens.push(lo);
        }
        let last = acts.last().expect("non-empty");
        let lo = *lens.last().expect("non-empty");
        let mut pooled: Vec<f64> = last
            .chunks(lo)
            .map(|ch| ch.iter().sum::<f64>() / lo as f64)
            .collect();
        pooled.push(mean);
        pooled.push(if std > 0.0 { std.ln() } else { 0.0 });
        let rms = (std * std + mean * mean).sqrt();
        pooled.push(if rms > 0.0 { rms.ln() } else { 0.0 });
        let mut embedding = vec![0.0; self.arch.embedding_dim];
        self.head.forward(p, &pooled, &mut embedding);
        Ok(EncoderCache {
            acts,
            lens,
            pooled,
            embedding,
        })
    }

    pub fn encode(&self, p: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(p, y)?.embedding)
    }

    /// Accumulates parameter gradients for `dL/d embedding = g_emb`.
    pub fn backward(&self, p: &[f64], cache: &EncoderCache, g_emb: &[f64], grad: &mut [f64]) {
        let mut g_pool = vec![0.0; self.head.n_in];
        self.head
            .backward(p, &cache.pooled, g_emb, grad, Some(&mut g_pool));
        let n = self.convs.len();
        let lo = cache.lens[n];
        g_pool.truncate(self.head.n_in - SUMMARIES);
        let mut g: Vec<f64> = g_pool
            .iter()
            .flat_map(|gc| std::iter::repeat_n(gc / lo as f64, lo))
            .collect();
        for li in (0..n).rev() {
            tanh_backward(&cache.acts[li + 1], &mut g);
            let conv = &self.convs[li];
            let need_input = li > 0;
            let mut g_in = if need_input {
                vec![0.0; conv.c_in * cache.lens[li]]
            } else {
                Vec::new()
            };
            conv.backward(
                p,
                &cache.acts[li],
                cache.lens[li],
                &g,
                grad,
                if need_input { Some(&mut g_in) } else { None },
            );
            g = g_in;
        }
    }
}

/// Mean and population standard deviation.
pub fn standardization(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn build(arch: EncoderArch) -> (Encoder, Vec<f64>) {
        let mut lay = ParamLayout::default();
        let enc = Encoder::new(&mut lay, arch);
        let mut p = vec![0.0; lay.len()];
        enc.init(&mut p, &mut seeded(7));
        (enc, p)
    }

    #[test]
    fn receptive_field() {
        assert_eq!(EncoderArch::default().min_len(), 1 + 8 + 16 + 32);
        let (enc, p) = build(EncoderArch::default());
        assert!(enc.encode(&p, &vec![0.1; 56]).is_err());
        assert!(enc.encode(&p, &vec![0.1; 57]).is_ok());
    }

    #[test]
    fn zero_signal_maps_to_zero() {
        let (enc, p) = build(EncoderArch::default());
        let e = enc.encode(&p, &vec![0.0; 300]).unwrap();
        assert_eq!(e.len(), 32);
        assert!(e.iter().all(|v| *v == 0.0));
        assert_eq!(e, enc.encode(&p, &vec![0.0; 300]).unwrap());
    }

    #[test]
    fn steady_state_padding_barely_moves_embedding() {
        let (enc, p) = build(EncoderArch::default());
        let n = 8192;
        let mut y: Vec<f64> = (0..n)
            .map(|t| 0.5 * (t as f64 * 0.05).sin() * (-(t as f64) / 1500.0).exp())
            .collect();
        let base = enc.encode(&p, &y).unwrap();
        let last = *y.last().unwrap();
        y.push(last);
        let padded = enc.encode(&p, &y).unwrap();
        let diff = base
            .iter()
            .zip(&padded)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-3, "max embedding change {diff}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (enc, p) = build(EncoderArch {
            channels: vec![3, 4],
            width: 4,
            stride: 2,
            embedding_dim: 5,
        });
        let y: Vec<f64> = (0..40)
            .map(|t| (t as f64 * 0.3).sin() + 0.1 * t as f64 / 40.0)
            .collect();
        let coef: Vec<f64> = (0..5).map(|i| i as f64 - 2.0).collect();
        let loss = |p: &[f64]| {
            enc.encode(p, &y)
                .unwrap()
                .iter()
                .zip(&coef)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let cache = enc.forward(&p, &y).unwrap();
        let mut g = vec![0.0; p.len()];
        enc.backward(&p, &cache, &coef, &mut g);
        for i in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (loss(&a) - loss(&b)) / 2e-6;
            assert!(
                (fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                g[i]
            );
        }
    }
}
