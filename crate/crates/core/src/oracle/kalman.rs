//! Exact Gaussian evidence `p(Y | A, q, r, alpha)` with the latent trajectory
//! integrated out by a Kalman filter over the stacked lag state
//! `[x[t], x[t-1], ..., x[t-K+1]]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, domain_err, Result};
use crate::model::{ConditionTrack, CouplingSet, Matrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log marginal likelihood of `y` (`M x T`) for fixed couplings, noise
/// variances and realized kernels. `x[0] ~ N(0, diag q)`; history before
/// `t = 0` is exactly zero.
pub fn kalman_log_evidence(
    y: &Matrix,
    kernels: &[Vec<f64>],
    coupling: &CouplingSet,
    track: &ConditionTrack,
    q: &[f64],
    r: &[f64],
) -> Result<f64> {
    let (m, t_len) = y.shape();
    if kernels.len() != m
        || q.len() != m
        || r.len() != m
        || coupling.nodes() != m
        || track.len() != t_len
    {
        return Err(dim_err("Kalman evidence inputs disagree on M or T"));
    }
    if q.iter().chain(r).any(|v| !(*v > 0.0)) {
        return Err(domain_err("noise variances must be positive"));
    }
    let k = kernels.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let n = m * k;
    let mut obs = DMatrix::<f64>::zeros(m, n);
    for (i, h) in kernels.iter().enumerate() {
        for (lag, hv) in h.iter().enumerate() {
            obs[(i, lag * m + i)] = *hv;
        }
    }
    let transitions: Vec<DMatrix<f64>> = coupling
        .matrices
        .iter()
        .map(|a| {
            let mut f = DMatrix::<f64>::zeros(n, n);
            f.view_mut((0, 0), (m, m)).copy_from(a);
            for lag in 1..k {
                for i in 0..m {
                    f[(lag * m + i, (lag - 1) * m + i)] = 1.0;
                }
            }
            f
        })
        .collect();
    let r_diag = DMatrix::from_diagonal(&DVector::from_column_slice(r));

    let mut mean = DVector::<f64>::zeros(n);
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..m {
        cov[(i, i)] = q[i];
    }
    let mut ll = 0.0;
    for t in 0..t_len {
        let innov = y.column(t) - &obs * &mean;
        let ph = &cov * obs.transpose();
        let s = &obs * &ph + &r_diag;
        let chol = s
            .cholesky()
            .ok_or_else(|| domain_err("innovation covariance is not positive definite"))?;
        let sol = chol.solve(&innov);
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        ll += -0.5 * (m as f64 * LN_2PI + log_det + innov.dot(&sol));
        let gain = chol.solve(&ph.transpose()).transpose();
        mean += &gain * innov;
        // Joseph form keeps the covariance symmetric positive semi-definite.
        let i_kh = DMatrix::<f64>::identity(n, n) - &gain * &obs;
        cov = &i_kh * &cov * i_kh.transpose() + &gain * &r_diag * gain.transpose();
        if t + 1 < t_len {
            let f = &transitions[track.at(t)];
            mean = f * mean;
            cov = f * &cov * f.transpose();
            for i in 0..m {
                cov[(i, i)] += q[i];
            }
            cov = (&cov + cov.transpose()) * 0.5;
        }
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::density::log_gauss;
    use crate::model::{
        log_joint_terms, ConditionTrack, HyperParams, JointPoint, MdsModel, ModelConfig,
        ObservedSignal, RfBasis,
    };

    #[test]
    fn independent_white_case_is_product_of_gaussians() {
        let y = Matrix::from_row_slice(1, 3, &[0.3, -1.2, 0.5]);
        let got = kalman_log_evidence(
            &y,
            &[vec![1.0]],
            &CouplingSet::zeros(1, 1),
            &ConditionTrack::constant(3),
            &[0.4],
            &[0.1],
        )
        .unwrap();
        let want: f64 = y.iter().map(|v| log_gauss(*v, 0.0, 0.5)).sum();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn matches_quadrature_of_the_joint() {
        // M = 1, T = 2, two-tap kernel: integrate exp(obs + latent) over (x0, x1).
        let basis = RfBasis {
            h0: vec![1.0, 0.5],
            h0dot: vec![-0.4, 0.2],
            dt: 1.0,
        };
        let model = MdsModel::from_basis(ModelConfig::new(1, 2, 2), basis.clone()).unwrap();
        let signal = ObservedSignal {
            y: Matrix::from_row_slice(1, 2, &[0.4, -0.3]),
            dt: 1.0,
            track: ConditionTrack::constant(2),
        };
        let hyper = HyperParams {
            alpha: vec![0.3],
            q: vec![0.2],
            r: vec![0.15],
        };
        let coupling = CouplingSet::single(Matrix::from_element(1, 1, 0.6));
        let kernel = basis.kernel_unchecked(0.3);
        let want = kalman_log_evidence(
            &signal.y,
            &[kernel],
            &coupling,
            &signal.track,
            &hyper.q,
            &hyper.r,
        )
        .unwrap();

        let (lo, hi, n) = (-4.0, 4.0, 801);
        let step = (hi - lo) / (n - 1) as f64;
        let mut vals = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let x = Matrix::from_row_slice(1, 2, &[lo + a as f64 * step, lo + b as f64 * step]);
                let terms = log_joint_terms(
                    &model,
                    &signal,
                    JointPoint {
                        x: &x,
                        coupling: &coupling,
                        hyper: &hyper,
                    },
                )
                .unwrap();
                vals.push(terms.obs + terms.latent);
            }
        }
        let peak = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = vals.iter().map(|v| (v - peak).exp()).sum();
        let got = peak + (sum * step * step).ln();
        assert!(
            (got - want).abs() < 1e-6,
            "quadrature {got} vs Kalman {want}"
        );
    }
}
