use nalgebra::{Complex, DMatrix, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, domain_err, Result};

pub type Matrix = DMatrix<f64>;

/// One M x M coupling matrix per condition. Entry `(m2, m1)` couples the
/// source node `m1` into the next state of target node `m2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSet {
    pub matrices: Vec<Matrix>,
}

impl CouplingSet {
    pub fn zeros(c: usize, m: usize) -> Self {
        Self {
            matrices: vec![Matrix::zeros(m, m); c],
        }
    }

    pub fn single(a: Matrix) -> Self {
        Self { matrices: vec![a] }
    }

    pub fn conditions(&self) -> usize {
        self.matrices.len()
    }

    pub fn nodes(&self) -> usize {
        self.matrices.first().map_or(0, |a| a.nrows())
    }

    /// Row-major flattening, condition by condition.
    pub fn to_flat(&self) -> Vec<f64> {
        let m = self.nodes();
        let mut out = Vec::with_capacity(self.conditions() * m * m);
        for a in &self.matrices {
            for i in 0..m {
                for j in 0..m {
                    out.push(a[(i, j)]);
                }
            }
        }
        out
    }

    pub fn from_flat(c: usize, m: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != c * m * m {
            return Err(dim_err(format!(
                "expected {} coupling values, got {}",
                c * m * m,
                flat.len()
            )));
        }
        let matrices = (0..c)
            .map(|ci| Matrix::from_row_slice(m, m, &flat[ci * m * m..(ci + 1) * m * m]))
            .collect();
        Ok(Self { matrices })
    }

    /// Largest spectral radius over conditions.
    pub fn spectral_radius(&self) -> f64 {
        self.matrices
            .iter()
            .map(spectral_radius)
            .fold(0.0, f64::max)
    }
}

/// Eigenvalues of a square matrix, or `None` when the QR iteration does not
/// converge on either the matrix or its transpose. nalgebra's uncapped Schur
/// loop can cycle forever on rare inputs, hence the cap.
pub fn eigenvalues(a: &Matrix) -> Option<Vec<Complex<f64>>> {
    [a.clone(), a.transpose()].into_iter().find_map(|m| {
        Schur::try_new(m, f64::EPSILON, 10_000)
            .map(|s| s.complex_eigenvalues().iter().copied().collect())
    })
}

pub fn spectral_radius(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    match eigenvalues(a) {
        Some(ev) => ev.iter().map(|z| z.norm()).fold(0.0, f64::max),
        // Gelfand: rho = lim |A^k|^(1/k), by repeated squaring with rescaling.
        None => {
            let mut p = a.clone();
            let mut log_scale = 0.0;
            let squarings = 12;
            for _ in 0..squarings {
                p = &p * &p;
                let n = p.norm();
                if n == 0.0 {
                    return 0.0;
                }
                p /= n;
                log_scale = 2.0 * log_scale + n.ln();
            }
            (log_scale / f64::from(1u32 << squarings)).exp()
        }
    }
}

/// Latent and measurement noise variances, one per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl NoiseLevels {
    pub fn new(q: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        if q.len() != r.len() {
            return Err(dim_err("q and r must have the same length"));
        }
        if q.iter().chain(&r).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(domain_err("noise variances must be positive and finite"));
        }
        Ok(Self { q, r })
    }
}

/// Per-region measurement hyper-parameters: response angle and noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl HyperParams {
    pub fn nodes(&self) -> usize {
        self.alpha.len()
    }

    pub fn noise(&self) -> NoiseLevels {
        NoiseLevels {
            q: self.q.clone(),
            r: self.r.clone(),
        }
    }
}

/// Condition label per time step, stored zero-based (`0..C`). Files carry
/// the one-based labels `1..=C`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionTrack {
    labels: Vec<usize>,
    conditions: usize,
}

impl ConditionTrack {
    pub fn new(labels: Vec<usize>, conditions: usize) -> Result<Self> {
        if conditions == 0 {
            return Err(domain_err("condition count must be positive"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= conditions) {
            return Err(domain_err(format!(
                "condition label {bad} outside 0..{conditions}"
            )));
        }
        Ok(Self { labels, conditions })
    }

    /// All steps in condition 0.
    pub fn constant(t: usize) -> Self {
        Self {
            labels: vec![0; t],
            conditions: 1,
        }
    }

    pub fn from_one_based(labels: &[usize], conditions: usize) -> Result<Self> {
        if labels.contains(&0) {
            return Err(domain_err("one-based condition labels must be >= 1"));
        }
        Self::new(labels.iter().map(|l| l - 1).collect(), conditions)
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn conditions(&self) -> usize {
        self.conditions
    }

    pub fn at(&self, t: usize) -> usize {
        self.labels[t]
    }
}

/// Latent activations, M x T (column `t` is the state `x[t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub x: Matrix,
}

/// Measured signals, M x T, with their sampling metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSignal {
    pub y: Matrix,
    pub dt: f64,
    pub track: ConditionTrack,
}

impl ObservedSignal {
    pub fn nodes(&self) -> usize {
        self.y.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }

    pub fn region(&self, m: usize) -> Vec<f64> {
        self.y.row(m).iter().copied().collect()
    }
}
