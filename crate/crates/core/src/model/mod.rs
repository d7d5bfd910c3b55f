//! Multivariate dynamical systems generative model: linear latent dynamics
//! observed through region-specific response kernels.

pub mod config;
pub mod density;
pub mod generate;
pub mod io;
pub mod rf;
pub mod types;

pub use config::{CouplingPrior, ModelConfig, ALPHA_BOUND};
pub use density::{
    log_joint, log_joint_grad, log_joint_terms, JointGradient, JointPoint, LogJointTerms,
};
pub use generate::{
    observe, sample_dataset, sample_prior, simulate_latent, simulate_with_coupling, PriorDraw,
    SyntheticDataset,
};
pub use rf::{build_rf, make_rf_basis, KernelShape, RegionRf, RfBasis};
pub use types::{
    eigenvalues, spectral_radius, ConditionTrack, CouplingSet, HyperParams, LatentTrajectory,
    Matrix, NoiseLevels, ObservedSignal,
};

use crate::error::{config_err, Result};

/// A validated configuration together with its response-function basis.
#[derive(Debug, Clone, PartialEq)]
pub struct MdsModel {
    pub config: ModelConfig,
    pub basis: RfBasis,
}

impl MdsModel {
    pub fn new(config: ModelConfig, shape: KernelShape) -> Result<Self> {
        config.validate()?;
        let basis = make_rf_basis(&config, &shape)?;
        Ok(Self { config, basis })
    }

    /// Uses a pre-built basis; its length must equal `K`.
    pub fn from_basis(config: ModelConfig, basis: RfBasis) -> Result<Self> {
        config.validate()?;
        if basis.len() != config.k || basis.h0dot.len() != config.k {
            return Err(config_err(format!(
                "basis length {} differs from K = {}",
                basis.len(),
                config.k
            )));
        }
        Ok(Self { config, basis })
    }
}
