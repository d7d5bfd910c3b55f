use rand::Rng as _;
use rand_distr::StandardNormal;

use super::hyper::HpDraw;
use super::regressor::HyperRegressor;
use crate::error::{Error, Result};
use crate::model::{
    log_joint_grad, log_joint_terms, CouplingSet, JointPoint, LogJointTerms, Matrix, MdsModel,
    ObservedSignal,
};
use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Options for one ELBO evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ElboOptions<'a> {
    /// Reparameterized `(X, A)` draws per hyper-parameter draw.
    pub s_p: usize,
    /// Treat the couplings as known: `A` is not sampled and its prior factor
    /// is left out.
    pub fixed_coupling: Option<&'a CouplingSet>,
    /// Step index reported in errors.
    pub step: usize,
}

impl Default for ElboOptions<'_> {
    fn default() -> Self {
        Self {
            s_p: 1,
            fixed_coupling: None,
            step: 0,
        }
    }
}

pub(crate) fn offending_term(terms: Option<LogJointTerms>) -> String {
    let Some(t) = terms else {
        return "support".into();
    };
    let named = [
        ("obs", t.obs),
        ("latent", t.latent),
        ("prior_a", t.prior_a),
        ("prior_q", t.prior_q),
        ("prior_r", t.prior_r),
        ("prior_alpha", t.prior_alpha),
        ("prior_c", t.prior_c),
    ];
    named
        .iter()
        .find(|(_, v)| !v.is_finite())
        .map_or("total", |(n, _)| n)
        .to_string()
}

/// Monte Carlo ELBO for one hyper-parameter draw. When `grad` is given, the
/// gradient of the estimate with respect to the regressor weights is
/// accumulated into it (ascent direction).
#[allow(clippy::too_many_arguments)]
pub fn elbo_with_grad(
    model: &MdsModel,
    signal: &ObservedSignal,
    draw: &HpDraw,
    reg: &HyperRegressor,
    p: &[f64],
    opts: ElboOptions,
    rng: &mut Rng,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let lay = reg.layout;
    let (m, t) = (lay.m, lay.t);
    let cache = reg.forward(p, &draw.hyper);
    let out = &cache.output;
    let fixed = opts.fixed_coupling;
    let s_p = opts.s_p.max(1);
    let mut g_out = vec![0.0; lay.len()];

    let mut entropy: f64 =
        out[lay.log_std_x()].iter().sum::<f64>() + 0.5 * lay.nx() as f64 * (1.0 + LN_2PI);
    g_out[lay.log_std_x()].fill(1.0);
    if fixed.is_none() {
        entropy +=
            out[lay.log_std_a()].iter().sum::<f64>() + 0.5 * lay.na() as f64 * (1.0 + LN_2PI);
        g_out[lay.log_std_a()].fill(1.0);
    }

    let (mx, sx) = (&out[lay.mean_x()], &out[lay.log_std_x()]);
    let (ma, sa) = (&out[lay.mean_a()], &out[lay.log_std_a()]);
    let w = 1.0 / s_p as f64;
    let mut total = 0.0;
    let mut eps_x = vec![0.0; lay.nx()];
    let mut eps_a = vec![0.0; lay.na()];
    for _ in 0..s_p {
        eps_x
            .iter_mut()
            .for_each(|e| *e = rng.sample(StandardNormal));
        let x = Matrix::from_fn(m, t, |i, tt| {
            let k = i * t + tt;
            mx[k] + sx[k].exp() * eps_x[k]
        });
        let sampled;
        let coupling = match fixed {
            Some(c) => c,
            None => {
                eps_a
                    .iter_mut()
                    .for_each(|e| *e = rng.sample(StandardNormal));
                let flat: Vec<f64> = (0..lay.na())
                    .map(|k| ma[k] + sa[k].exp() * eps_a[k])
                    .collect();
                sampled = CouplingSet::from_flat(lay.c, m, &flat)?;
                &sampled
            }
        };
        let point = JointPoint {
            x: &x,
            coupling,
            hyper: &draw.hyper,
        };
        let evaluated = log_joint_grad(model, signal, point);
        let Some((mut val, g)) = evaluated.filter(|(v, _)| v.is_finite()) else {
            return Err(Error::NonFinite {
                term: offending_term(log_joint_terms(model, signal, point)),
                step: opts.step,
            });
        };
        if fixed.is_some() {
            val -= log_joint_terms(model, signal, point).map_or(0.0, |terms| terms.prior_a);
        }
        total += val * w;
        for i in 0..m {
            for tt in 0..t {
                let k = i * t + tt;
                let gx = g.x[(i, tt)] * w;
                g_out[k] += gx;
                g_out[lay.nx() + k] += gx * sx[k].exp() * eps_x[k];
            }
        }
        if fixed.is_none() {
            let base = lay.mean_a().start;
            for (ci, ga) in g.a.iter().enumerate() {
                for r in 0..m {
                    for s in 0..m {
                        let k = ci * m * m + r * m + s;
                        let gv = ga[(r, s)] * w;
                        g_out[base + k] += gv;
                        g_out[base + lay.na() + k] += gv * sa[k].exp() * eps_a[k];
                    }
                }
            }
        }
    }
    let value = total + entropy - draw.log_density;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            term: "entropy".into(),
            step: opts.step,
        });
    }
    if let Some(grad) = grad {
        reg.backward(p, &cache, &g_out, grad);
    }
    Ok(value)
}

/// Monte Carlo estimate of `E[log p(Y, X, A, hyper) - log q_P(X, A | hyper)] - log q_HP(hyper)`
/// with `s_p` reparameterized draws.
pub fn elbo_estimate(
    model: &MdsModel,
    signal: &ObservedSignal,
    draw: &HpDraw,
    reg: &HyperRegressor,
    p: &[f64],
    opts: ElboOptions,
    rng: &mut Rng,
) -> Result<f64> {
    elbo_with_grad(model, signal, draw, reg, p, opts, rng, None)
}
