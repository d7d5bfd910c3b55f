//! Directed coupling inference between latent network nodes observed through
//! unknown, time-shifting response functions.
//!
//! Measurement hyper-parameters (response angle, latent and measurement noise)
//! get an amortized forward-KL posterior ([`favi`]); couplings and latent
//! trajectories get a reverse-KL Gaussian posterior conditioned on draws from
//! it ([`coupling`]). [`baseline`] fits everything with reverse KL for
//! comparison, [`oracle`] holds closed-form and brute-force references,
//! [`neuro`] generates out-of-model validation data and [`eval`] scores it all.

pub mod baseline;
pub mod coupling;
pub mod error;
pub mod eval;
pub mod favi;
pub mod model;
pub mod neuro;
pub mod nn;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
pub use model::{
    ConditionTrack, CouplingSet, HyperParams, KernelShape, LatentTrajectory, MdsModel, ModelConfig,
    NoiseLevels, ObservedSignal,
};
