//! Reverse-KL posterior over latent trajectories and couplings, conditioned
//! on draws from a frozen hyper-parameter posterior. A perceptron regresses
//! the moments of a diagonal Gaussian from each draw; marginalizing over draws
//! gives a Gaussian mixture over the couplings.

pub mod elbo;
pub mod fit;
pub mod hyper;
pub mod mixture;
pub mod regressor;

pub use elbo::{elbo_estimate, elbo_with_grad, ElboOptions};
pub use fit::{
    fit_parameters, fit_parameters_with, mean_elbo_gradient, FitConfig, FitLog, FitRow,
    FittedCoupling, PosteriorManifest,
};
pub use hyper::{HpContext, HpDraw, HyperPosterior, PointMassHp};
pub use mixture::{
    marginal_coupling_posterior, read_summary_csv, write_summary_csv, CouplingMixture,
    EntrySummary, SIGN_SAMPLES, SIGN_THRESHOLD,
};
pub use regressor::{
    GaussianPosteriorP, HyperRegressor, OutputLayout, RegressorCache, RegressorMode,
};
