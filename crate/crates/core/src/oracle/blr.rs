//! Closed-form Gaussian-prior Bayesian linear regression of each node's next
//! state on the previous latent state vector.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, domain_err, Result};
use crate::model::{ConditionTrack, LatentTrajectory};

/// Prior variance on every coupling coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorVariance {
    Finite(f64),
    /// Improper flat prior; the posterior mean is ordinary least squares.
    Flat,
}

/// Gaussian posterior over one row of `A` (the couplings into one node).
#[derive(Debug, Clone, PartialEq)]
pub struct RowPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlrPosterior {
    pub rows: Vec<RowPosterior>,
}

impl BlrPosterior {
    /// Posterior mean as an `M x M` matrix.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let m = self.rows.len();
        DMatrix::from_fn(m, m, |i, j| self.rows[i].mean[j])
    }

    pub fn std_matrix(&self) -> DMatrix<f64> {
        let m = self.rows.len();
        DMatrix::from_fn(m, m, |i, j| self.rows[i].cov[(j, j)].sqrt())
    }
}

/// Posterior over a single-condition coupling matrix using every transition.
pub fn blr_posterior(
    x: &LatentTrajectory,
    q: &[f64],
    prior: PriorVariance,
) -> Result<BlrPosterior> {
    let t = x.x.ncols();
    blr_on_transitions(x, q, prior, (0..t.saturating_sub(1)).collect())
}

/// Posterior over `A_c`, using only transitions `t -> t+1` with `c[t] == c`.
pub fn blr_posterior_condition(
    x: &LatentTrajectory,
    q: &[f64],
    prior: PriorVariance,
    track: &ConditionTrack,
    condition: usize,
) -> Result<BlrPosterior> {
    let t = x.x.ncols();
    if track.len() != t {
        return Err(dim_err(format!(
            "condition track has {} labels for {t} time points",
            track.len()
        )));
    }
    blr_on_transitions(
        x,
        q,
        prior,
        (0..t.saturating_sub(1))
            .filter(|&s| track.at(s) == condition)
            .collect(),
    )
}

fn blr_on_transitions(
    x: &LatentTrajectory,
    q: &[f64],
    prior: PriorVariance,
    steps: Vec<usize>,
) -> Result<BlrPosterior> {
    let m = x.x.nrows();
    if q.len() != m {
        return Err(dim_err(format!(
            "{} noise variances for {m} nodes",
            q.len()
        )));
    }
    if q.iter().any(|v| !(*v > 0.0)) {
        return Err(domain_err("latent noise variances must be positive"));
    }
    let prior_prec = match prior {
        PriorVariance::Finite(v) if v > 0.0 && v.is_finite() => 1.0 / v,
        PriorVariance::Finite(v) => {
            return Err(domain_err(format!(
                "prior variance must be positive, got {v}"
            )))
        }
        PriorVariance::Flat => 0.0,
    };
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut cross = DMatrix::<f64>::zeros(m, m);
    for &s in &steps {
        let prev = x.x.column(s);
        gram.ger(1.0, &prev, &prev, 1.0);
        // cross[:, i] accumulates prev * x_i[s+1]
        cross.ger(1.0, &prev, &x.x.column(s + 1), 1.0);
    }
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let prec = &gram / q[i] + DMatrix::identity(m, m) * prior_prec;
        let chol = prec.clone().cholesky().ok_or_else(|| {
            domain_err("posterior precision is singular; use a finite prior variance")
        })?;
        let cov = chol.inverse();
        let mean = chol.solve(&(cross.column(i) / q[i]));
        rows.push(RowPosterior { mean, cov });
    }
    Ok(BlrPosterior { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_latent, CouplingSet};
    use crate::rng::seeded;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    #[test]
    fn flat_prior_is_least_squares() {
        let mut rng = seeded(4);
        let x = LatentTrajectory {
            x: DMatrix::from_fn(3, 60, |_, _| rng.sample(StandardNormal)),
        };
        let post = blr_posterior(&x, &[0.3, 0.5, 1.0], PriorVariance::Flat).unwrap();
        // Normal equations solved independently via QR of the design.
        let design = x.x.columns(0, 59).transpose();
        let target = x.x.columns(1, 59).transpose();
        let qr = design.clone().qr();
        let ols = qr
            .r()
            .solve_upper_triangular(&(qr.q().transpose() * target))
            .unwrap();
        let got = post.mean_matrix().transpose();
        let err = (&got - &ols).norm() / ols.norm();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn no_transitions_returns_prior() {
        let x = LatentTrajectory {
            x: DMatrix::from_element(2, 1, 0.7),
        };
        let post = blr_posterior(&x, &[1.0, 1.0], PriorVariance::Finite(0.25)).unwrap();
        for row in &post.rows {
            assert!(row.mean.iter().all(|v| *v == 0.0));
            assert!((&row.cov - DMatrix::identity(2, 2) * 0.25).norm() < 1e-15);
        }
    }

    #[test]
    fn recovers_generating_coupling() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.2, 0.4, 0.0, 0.0, 0.2, 0.3]);
        let q = [0.01, 0.01, 0.01];
        let mut rng = seeded(5);
        let x = simulate_latent(
            &CouplingSet::single(a.clone()),
            &q,
            &ConditionTrack::constant(2000),
            &[0.0; 3],
            &mut rng,
        )
        .unwrap();
        let post = blr_posterior(&x, &q, PriorVariance::Finite(1.0)).unwrap();
        let dev = (post.mean_matrix() - a).abs().max();
        assert!(dev < 0.05, "max deviation {dev}");
    }

    #[test]
    fn masking_by_condition_uses_only_matching_steps() {
        let mut rng = seeded(6);
        let x = LatentTrajectory {
            x: DMatrix::from_fn(2, 40, |_, _| rng.sample(StandardNormal)),
        };
        let labels: Vec<usize> = (0..40).map(|t| t % 2).collect();
        let track = ConditionTrack::new(labels, 2).unwrap();
        let p0 = blr_posterior_condition(&x, &[1.0, 1.0], PriorVariance::Finite(1.0), &track, 0)
            .unwrap();
        let even = LatentTrajectory { x: x.x.clone() };
        let manual = blr_on_transitions(
            &even,
            &[1.0, 1.0],
            PriorVariance::Finite(1.0),
            (0..39).step_by(2).collect(),
        )
        .unwrap();
        assert_eq!(p0, manual);
    }

    #[test]
    fn rejects_non_positive_prior() {
        let x = LatentTrajectory {
            x: DMatrix::zeros(1, 5),
        };
        assert!(blr_posterior(&x, &[1.0], PriorVariance::Finite(0.0)).is_err());
    }
}
