//! Minimal dense, masked and 1-D convolutional layers over a flat parameter
//! buffer, with hand-derived backward passes and an Adam optimizer.
//!
//! Every network owns one `Vec<f64>` of weights; layers hold offsets into it.
//! Gradients live in a buffer of the same length, which keeps optimizer state,
//! checkpoints and checksums trivial.

mod adam;
mod layers;

pub use adam::{clip_grad_norm, Adam, AdamConfig, CosineSchedule};
pub use layers::{Conv1d, Dense, ParamLayout};

use sha2::{Digest, Sha256};

pub fn tanh_forward(x: &mut [f64]) {
    for v in x {
        *v = v.tanh();
    }
}

/// Backward through tanh given its output `y`.
pub fn tanh_backward(y: &[f64], g: &mut [f64]) {
    for (gi, yi) in g.iter_mut().zip(y) {
        *gi *= 1.0 - yi * yi;
    }
}

/// SHA-256 over the little-endian bytes of a weight buffer.
pub fn checksum(weights: &[f64]) -> String {
    let mut h = Sha256::new();
    for w in weights {
        h.update(w.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_le_bytes(weights: &[f64]) -> Vec<u8> {
    weights.iter().flat_map(|w| w.to_le_bytes()).collect()
}

pub fn from_le_bytes(bytes: &[u8]) -> crate::Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(crate::Error::Format(format!(
            "weight blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn add_assign(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

pub fn scale(v: &mut [f64], s: f64) {
    for x in v {
        *x *= s;
    }
}
