//! Frequency-domain Wiener deconvolution.
//!
//! [`wiener_filter`] is the plain filter on a `2T` zero-padded grid. Its
//! circular boundary leaves a small wrap-around error near both ends, so
//! [`wiener_deconvolve`] uses it as the starting point and preconditioner of a
//! conjugate-gradient solve of the exact linear-convolution ridge problem
//! `(H^T H + r/s I) x = H^T y` when the latent power is a scalar.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{domain_err, Result};

/// Prior power of the latent signal.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalPower {
    /// White latent signal with this variance.
    Scalar(f64),
    /// Power per frequency bin on the zero-padded grid of length `2T`.
    Spectrum(Vec<f64>),
}

fn fft(buf: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    plan.process(buf);
}

fn validate(h: &[f64], r: f64) -> Result<()> {
    if h.iter().all(|v| *v == 0.0) {
        return Err(domain_err("Wiener deconvolution needs a non-zero kernel"));
    }
    if !(r >= 0.0) {
        return Err(domain_err("measurement variance must be non-negative"));
    }
    Ok(())
}

/// Circular filter: `X(f) = conj(H) S / (|H|^2 S + r) * Y(f)` on a zero-padded
/// grid of length `2T`, truncated back to `T` samples.
pub fn wiener_filter(y: &[f64], h: &[f64], r: f64, power: &SignalPower) -> Result<Vec<f64>> {
    validate(h, r)?;
    let t = y.len();
    let n = 2 * t.max(h.len());
    let spectrum: Vec<f64> = match power {
        SignalPower::Scalar(s) => vec![*s; n],
        SignalPower::Spectrum(s) if s.len() == n => s.clone(),
        SignalPower::Spectrum(s) => {
            return Err(domain_err(format!(
                "latent spectrum has {} bins, expected {n}",
                s.len()
            )));
        }
    };
    let mut ybuf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(y.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut hbuf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(h.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fft(&mut ybuf, false);
    fft(&mut hbuf, false);
    for ((yf, hf), s) in ybuf.iter_mut().zip(&hbuf).zip(&spectrum) {
        let denom = hf.norm_sqr() * s + r;
        *yf = if denom > 0.0 {
            hf.conj() * *s / denom * *yf
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    fft(&mut ybuf, true);
    Ok(ybuf.iter().take(t).map(|c| c.re / n as f64).collect())
}

fn conv(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            h.iter()
                .take(t + 1)
                .enumerate()
                .map(|(k, hk)| hk * x[t - k])
                .sum()
        })
        .collect()
}

fn conv_adjoint(e: &[f64], h: &[f64]) -> Vec<f64> {
    let n = e.len();
    (0..n)
        .map(|s| {
            h.iter()
                .enumerate()
                .take(n - s)
                .map(|(k, hk)| hk * e[s + k])
                .sum()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Wiener deconvolution of a causal, zero-history convolution.
pub fn wiener_deconvolve(y: &[f64], h: &[f64], r: f64, power: &SignalPower) -> Result<Vec<f64>> {
    let start = wiener_filter(y, h, r, power)?;
    let s = match power {
        SignalPower::Scalar(s) => *s,
        SignalPower::Spectrum(_) => return Ok(start),
    };
    if !(s > 0.0) {
        return Ok(vec![0.0; y.len()]);
    }
    let lambda = r / s;
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut out = conv_adjoint(&conv(x, h), h);
        out.iter_mut().zip(x).for_each(|(o, xi)| *o += lambda * xi);
        out
    };
    let precondition = |v: &[f64]| -> Vec<f64> {
        // Circular approximation of the system inverse.
        wiener_filter_inverse_normal(v, h, lambda)
    };
    let rhs = conv_adjoint(y, h);
    let rhs_norm = dot(&rhs, &rhs).sqrt();
    let mut x = start;
    let ax = apply(&x);
    let mut res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; y.len()]);
    }
    let mut z = precondition(&res);
    let mut p = z.clone();
    let mut rz = dot(&res, &z);
    for _ in 0..10 * y.len().max(50) {
        if dot(&res, &res).sqrt() <= 1e-14 * rhs_norm {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let step = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += step * pi);
        res.iter_mut()
            .zip(&ap)
            .for_each(|(ri, ai)| *ri -= step * ai);
        z = precondition(&res);
        let rz_new = dot(&res, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut()
            .zip(&z)
            .for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Ok(x)
}

/// `v -> F^-1 [ F(v) / (|H|^2 + lambda) ]` on the padded grid, truncated.
fn wiener_filter_inverse_normal(v: &[f64], h: &[f64], lambda: f64) -> Vec<f64> {
    let t = v.len();
    let n = 2 * t.max(h.len());
    let mut vb: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(v.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut hb: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(h.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fft(&mut vb, false);
    fft(&mut hb, false);
    for (vf, hf) in vb.iter_mut().zip(&hb) {
        let d = hf.norm_sqr() + lambda;
        *vf = if d > 1e-300 {
            *vf / d
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    fft(&mut vb, true);
    vb.iter().take(t).map(|c| c.re / n as f64).collect()
}
