//! Joint log-density of the generative model and its gradient.
//!
//! The latent initial state follows `x[0] ~ N(0, diag(q))`; every later state
//! follows the per-condition linear dynamics. Densities of `q`, `r` are taken
//! with respect to Lebesgue measure on the positive reals, while gradients are
//! reported with respect to `log q` and `log r`.

use std::f64::consts::PI;

use super::config::{CouplingPrior, ALPHA_BOUND};
use super::rf::alpha_in_support;
use super::types::{CouplingSet, HyperParams, Matrix, ObservedSignal};
use super::MdsModel;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Point at which the joint density is evaluated.
#[derive(Debug, Clone, Copy)]
pub struct JointPoint<'a> {
    pub x: &'a Matrix,
    pub coupling: &'a CouplingSet,
    pub hyper: &'a HyperParams,
}

/// Each factor of the joint, separately.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogJointTerms {
    pub obs: f64,
    pub latent: f64,
    pub prior_a: f64,
    pub prior_q: f64,
    pub prior_r: f64,
    pub prior_alpha: f64,
    pub prior_c: f64,
}

impl LogJointTerms {
    pub fn total(&self) -> f64 {
        self.obs
            + self.latent
            + self.prior_a
            + self.prior_q
            + self.prior_r
            + self.prior_alpha
            + self.prior_c
    }
}

/// Gradient of the joint with respect to `(X, A, log q, log r, alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGradient {
    pub x: Matrix,
    pub a: Vec<Matrix>,
    pub log_q: Vec<f64>,
    pub log_r: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl JointGradient {
    fn zeros(m: usize, t: usize, c: usize) -> Self {
        Self {
            x: Matrix::zeros(m, t),
            a: vec![Matrix::zeros(m, m); c],
            log_q: vec![0.0; m],
            log_r: vec![0.0; m],
            alpha: vec![0.0; m],
        }
    }
}

pub fn log_normal_density(v: f64, mu: f64, sigma: f64) -> f64 {
    let lv = v.ln();
    -lv - sigma.ln() - 0.5 * LN_2PI - (lv - mu).powi(2) / (2.0 * sigma * sigma)
}

pub fn log_gauss(v: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - (v - mean).powi(2) / (2.0 * var)
}

fn in_support(model: &MdsModel, signal: &ObservedSignal, p: &JointPoint) -> bool {
    let cfg = &model.config;
    let m = signal.nodes();
    let h = p.hyper;
    h.alpha.len() == m
        && h.q.len() == m
        && h.r.len() == m
        && p.x.shape() == signal.y.shape()
        && p.coupling.nodes() == m
        && p.coupling.conditions() >= signal.track.conditions()
        && p.coupling.conditions() == cfg.c
        && h.q.iter().chain(&h.r).all(|v| *v > 0.0 && v.is_finite())
}

/// Sum of all factors; `-inf` outside the prior support.
pub fn log_joint(model: &MdsModel, signal: &ObservedSignal, point: JointPoint) -> f64 {
    log_joint_terms(model, signal, point).map_or(f64::NEG_INFINITY, |t| t.total())
}

/// Per-factor breakdown, or `None` outside the support.
pub fn log_joint_terms(
    model: &MdsModel,
    signal: &ObservedSignal,
    point: JointPoint,
) -> Option<LogJointTerms> {
    if !point.hyper.alpha.iter().all(|a| alpha_in_support(*a)) {
        return None;
    }
    evaluate(model, signal, point, None)
}

/// Value and gradient, or `None` outside the support. At exactly zero
/// coupling the Laplace prior contributes subgradient 0.
pub fn log_joint_grad(
    model: &MdsModel,
    signal: &ObservedSignal,
    point: JointPoint,
) -> Option<(f64, JointGradient)> {
    if !point.hyper.alpha.iter().all(|a| alpha_in_support(*a)) {
        return None;
    }
    let (m, t) = signal.y.shape();
    let mut grad = JointGradient::zeros(m, t, model.config.c);
    evaluate(model, signal, point, Some(&mut grad)).map(|terms| (terms.total(), grad))
}

/// Same as [`log_joint_grad`] but with the angle prior term dropped and no
/// support check on `alpha`; callers supply their own angle prior.
pub fn log_joint_grad_free_alpha(
    model: &MdsModel,
    signal: &ObservedSignal,
    point: JointPoint,
) -> Option<(LogJointTerms, JointGradient)> {
    let (m, t) = signal.y.shape();
    let mut grad = JointGradient::zeros(m, t, model.config.c);
    evaluate(model, signal, point, Some(&mut grad)).map(|mut terms| {
        terms.prior_alpha = 0.0;
        (terms, grad)
    })
}

fn evaluate(
    model: &MdsModel,
    signal: &ObservedSignal,
    p: JointPoint,
    mut grad: Option<&mut JointGradient>,
) -> Option<LogJointTerms> {
    if !in_support(model, signal, &p) {
        return None;
    }
    let cfg = &model.config;
    let (m, t_len) = signal.y.shape();
    let x = p.x;
    let hyper = p.hyper;
    let mut terms = LogJointTerms::default();

    // Observation factor.
    let mut xrow = vec![0.0; t_len];
    let mut resid = vec![0.0; t_len];
    for i in 0..m {
        for (t, v) in xrow.iter_mut().enumerate() {
            *v = x[(i, t)];
        }
        let h = model.basis.kernel_unchecked(hyper.alpha[i]);
        let r = hyper.r[i];
        let mut sq = 0.0;
        for t in 0..t_len {
            let pred: f64 = h
                .iter()
                .take(t + 1)
                .enumerate()
                .map(|(k, hk)| hk * xrow[t - k])
                .sum();
            resid[t] = signal.y[(i, t)] - pred;
            sq += resid[t] * resid[t];
        }
        terms.obs += -0.5 * t_len as f64 * (LN_2PI + r.ln()) - sq / (2.0 * r);
        if let Some(g) = grad.as_deref_mut() {
            g.log_r[i] += -0.5 * t_len as f64 + sq / (2.0 * r);
            let dh = model.basis.kernel_derivative(hyper.alpha[i]);
            let mut galpha = 0.0;
            for t in 0..t_len {
                let w = resid[t] / r;
                if w == 0.0 {
                    continue;
                }
                for k in 0..h.len().min(t + 1) {
                    g.x[(i, t - k)] += w * h[k];
                    galpha += w * dh[k] * xrow[t - k];
                }
            }
            g.alpha[i] += galpha;
        }
    }

    // Latent dynamics, including the initial state.
    for i in 0..m {
        let q = hyper.q[i];
        let x0 = x[(i, 0)];
        terms.latent += log_gauss(x0, 0.0, q);
        if let Some(g) = grad.as_deref_mut() {
            g.x[(i, 0)] -= x0 / q;
            g.log_q[i] += -0.5 + x0 * x0 / (2.0 * q);
        }
    }
    let inv_q: Vec<f64> = hyper.q.iter().map(|q| 1.0 / q).collect();
    let mut d = nalgebra::DVector::<f64>::zeros(m);
    for t in 0..t_len - 1 {
        let a = &p.coupling.matrices[signal.track.at(t)];
        d.copy_from(&x.column(t + 1));
        d.gemv(-1.0, a, &x.column(t), 1.0);
        for i in 0..m {
            terms.latent += -0.5 * (LN_2PI - inv_q[i].ln()) - 0.5 * d[i] * d[i] * inv_q[i];
        }
        if let Some(g) = grad.as_deref_mut() {
            for i in 0..m {
                g.log_q[i] += -0.5 + 0.5 * d[i] * d[i] * inv_q[i];
                d[i] *= inv_q[i];
            }
            // d now holds (x[t+1] - A x[t]) / q.
            for i in 0..m {
                g.x[(i, t + 1)] -= d[i];
            }
            let mut gx_col = g.x.column_mut(t);
            gx_col.gemv_tr(1.0, a, &d, 1.0);
            g.a[signal.track.at(t)].ger(1.0, &d, &x.column(t), 1.0);
        }
    }

    // Coupling prior.
    for (ci, a) in p.coupling.matrices.iter().enumerate() {
        for (idx, v) in a.iter().enumerate() {
            match cfg.coupling_prior {
                CouplingPrior::Laplace => {
                    let b = cfg.laplace_scale_a;
                    terms.prior_a += -(2.0 * b).ln() - v.abs() / b;
                    if let Some(g) = grad.as_deref_mut() {
                        let s = if *v > 0.0 {
                            1.0
                        } else if *v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        g.a[ci].as_mut_slice()[idx] -= s / b;
                    }
                }
                CouplingPrior::Gaussian { variance } => {
                    terms.prior_a += log_gauss(*v, 0.0, variance);
                    if let Some(g) = grad.as_deref_mut() {
                        g.a[ci].as_mut_slice()[idx] -= v / variance;
                    }
                }
            }
        }
    }

    for i in 0..m {
        terms.prior_q += log_normal_density(hyper.q[i], cfg.lognormal_mu_q, cfg.lognormal_sigma_q);
        terms.prior_r += log_normal_density(hyper.r[i], cfg.lognormal_mu_r, cfg.lognormal_sigma_r);
        if let Some(g) = grad.as_deref_mut() {
            let s2q = cfg.lognormal_sigma_q.powi(2);
            let s2r = cfg.lognormal_sigma_r.powi(2);
            g.log_q[i] += -1.0 - (hyper.q[i].ln() - cfg.lognormal_mu_q) / s2q;
            g.log_r[i] += -1.0 - (hyper.r[i].ln() - cfg.lognormal_mu_r) / s2r;
        }
    }
    terms.prior_alpha = -(m as f64) * (2.0 * ALPHA_BOUND).ln();
    terms.prior_c = -(t_len as f64) * (cfg.c as f64).ln();
    debug_assert!((2.0 * ALPHA_BOUND - PI / 2.0).abs() < 1e-15);
    Some(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::generate::sample_dataset;
    use crate::model::rf::KernelShape;
    use crate::model::types::ConditionTrack;
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn terms_add_up() {
        let model = MdsModel::new(
            ModelConfig {
                c: 2,
                ..ModelConfig::new(3, 40, 8)
            },
            KernelShape::default(),
        )
        .unwrap();
        let ds = sample_dataset(&model, &mut seeded(1)).unwrap();
        let hyper = ds.hyper();
        let point = JointPoint {
            x: &ds.latent.x,
            coupling: &ds.prior.coupling,
            hyper: &hyper,
        };
        let terms = log_joint_terms(&model, &ds.signal, point).unwrap();
        let sum = terms.obs
            + terms.latent
            + terms.prior_a
            + terms.prior_q
            + terms.prior_r
            + terms.prior_alpha
            + terms.prior_c;
        assert_eq!(log_joint(&model, &ds.signal, point), sum);
        let (v, _) = log_joint_grad(&model, &ds.signal, point).unwrap();
        assert!((v - sum).abs() < 1e-9 * sum.abs());
    }

    #[test]
    fn scalar_hand_computation() {
        // M = 1, T = 2, K = 1: every factor is a scalar density.
        let cfg = ModelConfig {
            m: 1,
            t: 2,
            k: 1,
            ..ModelConfig::default()
        };
        let basis = crate::model::rf::RfBasis {
            h0: vec![1.0],
            h0dot: vec![0.0],
            dt: 1.0,
        };
        let model = MdsModel::from_basis(cfg.clone(), basis).unwrap();
        let (y0, y1, x0, x1, a, q, r) = (0.3, -0.2, 0.25, -0.1, 0.4, 0.15, 0.07);
        let signal = ObservedSignal {
            y: Matrix::from_row_slice(1, 2, &[y0, y1]),
            dt: 1.0,
            track: ConditionTrack::constant(2),
        };
        let x = Matrix::from_row_slice(1, 2, &[x0, x1]);
        let coupling = CouplingSet::single(Matrix::from_element(1, 1, a));
        let hyper = HyperParams {
            alpha: vec![0.0],
            q: vec![q],
            r: vec![r],
        };
        let got = log_joint(
            &model,
            &signal,
            JointPoint {
                x: &x,
                coupling: &coupling,
                hyper: &hyper,
            },
        );

        let normal = |v: f64, mean: f64, var: f64| {
            (-(v - mean) * (v - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
        };
        let lognormal = |v: f64, mu: f64, s: f64| {
            (-(v.ln() - mu).powi(2) / (2.0 * s * s)).exp() / (v * s * (2.0 * PI).sqrt())
        };
        let b = cfg.laplace_scale_a;
        let density = normal(y0, x0, r)
            * normal(y1, x1, r)
            * normal(x0, 0.0, q)
            * normal(x1, a * x0, q)
            * ((-a.abs() / b).exp() / (2.0 * b))
            * lognormal(q, -2.0, 0.5)
            * lognormal(r, -2.0, 0.5)
            * (2.0 / PI);
        assert!(
            (got - density.ln()).abs() < 1e-10,
            "{got} vs {}",
            density.ln()
        );
    }

    #[test]
    fn boundary_angle_is_outside_support() {
        let model = MdsModel::new(ModelConfig::new(1, 10, 4), KernelShape::default()).unwrap();
        let ds = sample_dataset(&model, &mut seeded(2)).unwrap();
        let hyper = HyperParams {
            alpha: vec![PI / 4.0],
            ..ds.hyper()
        };
        let point = JointPoint {
            x: &ds.latent.x,
            coupling: &ds.prior.coupling,
            hyper: &hyper,
        };
        assert_eq!(log_joint(&model, &ds.signal, point), f64::NEG_INFINITY);
        let hyper = HyperParams {
            q: vec![0.0],
            ..ds.hyper()
        };
        let point = JointPoint {
            x: &ds.latent.x,
            coupling: &ds.prior.coupling,
            hyper: &hyper,
        };
        assert_eq!(log_joint(&model, &ds.signal, point), f64::NEG_INFINITY);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = MdsModel::new(
            ModelConfig {
                c: 2,
                ..ModelConfig::new(3, 25, 6)
            },
            KernelShape::default(),
        )
        .unwrap();
        let mut rng = seeded(4);
        let ds = sample_dataset(&model, &mut rng).unwrap();
        let mut coupling = ds.prior.coupling.clone();
        // keep away from the Laplace kink
        for a in &mut coupling.matrices {
            for v in a.iter_mut() {
                if v.abs() < 1e-3 {
                    *v = 0.05;
                }
            }
        }
        let hyper = ds.hyper();
        let x = ds.latent.x.clone();
        let point = JointPoint {
            x: &x,
            coupling: &coupling,
            hyper: &hyper,
        };
        let (_, g) = log_joint_grad(&model, &ds.signal, point).unwrap();
        let h = 1e-5;
        let f = |x: &Matrix, c: &CouplingSet, hp: &HyperParams| {
            log_joint(
                &model,
                &ds.signal,
                JointPoint {
                    x,
                    coupling: c,
                    hyper: hp,
                },
            )
        };
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);

        for _ in 0..20 {
            let (i, t) = (rng.random_range(0..3), rng.random_range(0..25));
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[(i, t)] += h;
            xm[(i, t)] -= h;
            let fd = (f(&xp, &coupling, &hyper) - f(&xm, &coupling, &hyper)) / (2.0 * h);
            assert!(rel(fd, g.x[(i, t)]) < 1e-5, "x fd {fd} vs {}", g.x[(i, t)]);
        }
        for ci in 0..2 {
            for idx in 0..9 {
                let (mut cp, mut cm) = (coupling.clone(), coupling.clone());
                cp.matrices[ci].as_mut_slice()[idx] += h;
                cm.matrices[ci].as_mut_slice()[idx] -= h;
                let fd = (f(&x, &cp, &hyper) - f(&x, &cm, &hyper)) / (2.0 * h);
                assert!(
                    rel(fd, g.a[ci].as_slice()[idx]) < 1e-5,
                    "A fd {fd} vs {}",
                    g.a[ci].as_slice()[idx]
                );
            }
        }
        for i in 0..3 {
            let bump = |which: usize, s: f64| {
                let mut hp = hyper.clone();
                match which {
                    0 => hp.q[i] *= s.exp(),
                    1 => hp.r[i] *= s.exp(),
                    _ => hp.alpha[i] += s,
                }
                f(&x, &coupling, &hp)
            };
            for (which, an) in [(0, g.log_q[i]), (1, g.log_r[i]), (2, g.alpha[i])] {
                let fd = (bump(which, h) - bump(which, -h)) / (2.0 * h);
                assert!(rel(fd, an) < 1e-5, "hyper {which} fd {fd} vs {an}");
            }
        }
    }
}
