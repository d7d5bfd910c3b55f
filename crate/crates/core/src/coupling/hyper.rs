use crate::error::{dim_err, Result};
use crate::favi::{HpEstimator, RegionHyper};
use crate::model::{HyperParams, ObservedSignal};
use crate::nn;
use crate::rng::Rng;

/// One joint draw of all regions' hyper-parameters with its log-density
/// under the hyper-parameter posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct HpDraw {
    pub hyper: HyperParams,
    pub log_density: f64,
}

/// Per-dataset conditioning, computed once per fit.
#[derive(Debug, Clone, PartialEq)]
pub struct HpContext {
    pub embeddings: Vec<Vec<f64>>,
}

/// Read-only source of hyper-parameter draws for the coupling fit.
pub trait HyperPosterior: Sync {
    /// Digest of everything that determines the draws; must not change
    /// during a fit.
    fn fingerprint(&self) -> String;

    fn condition(&self, signal: &ObservedSignal) -> Result<HpContext>;

    fn draw(&self, ctx: &HpContext, rng: &mut Rng) -> HpDraw;
}

impl HyperPosterior for HpEstimator {
    fn fingerprint(&self) -> String {
        self.checksum()
    }

    fn condition(&self, signal: &ObservedSignal) -> Result<HpContext> {
        let embeddings = (0..signal.nodes())
            .map(|m| self.encode(&signal.region(m)))
            .collect::<Result<Vec<_>>>()?;
        Ok(HpContext { embeddings })
    }

    fn draw(&self, ctx: &HpContext, rng: &mut Rng) -> HpDraw {
        let m = ctx.embeddings.len();
        let mut hyper = HyperParams {
            alpha: Vec::with_capacity(m),
            q: Vec::with_capacity(m),
            r: Vec::with_capacity(m),
        };
        let mut log_density = 0.0;
        for emb in &ctx.embeddings {
            let (RegionHyper { alpha, q, r }, lp) = self.flow_sample(emb, 1, rng)[0];
            hyper.alpha.push(alpha);
            hyper.q.push(q);
            hyper.r.push(r);
            log_density += lp;
        }
        HpDraw { hyper, log_density }
    }
}

/// Frozen point mass, for known-noise instances and oracle comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassHp {
    pub hyper: HyperParams,
}

impl HyperPosterior for PointMassHp {
    fn fingerprint(&self) -> String {
        let flat: Vec<f64> = self
            .hyper
            .alpha
            .iter()
            .chain(&self.hyper.q)
            .chain(&self.hyper.r)
            .copied()
            .collect();
        nn::checksum(&flat)
    }

    fn condition(&self, signal: &ObservedSignal) -> Result<HpContext> {
        if signal.nodes() != self.hyper.nodes() {
            return Err(dim_err(format!(
                "point mass has {} regions, signal {}",
                self.hyper.nodes(),
                signal.nodes()
            )));
        }
        Ok(HpContext {
            embeddings: vec![Vec::new(); signal.nodes()],
        })
    }

    fn draw(&self, _ctx: &HpContext, _rng: &mut Rng) -> HpDraw {
        HpDraw {
            hyper: self.hyper.clone(),
            log_density: 0.0,
        }
    }
}
