//! Independent references for tests: Wiener deconvolution, closed-form
//! Bayesian linear regression, Kalman evidence and brute-force grid
//! posteriors on tiny instances. Nothing in the fitting path calls these.

pub mod blr;
pub mod grid;
pub mod kalman;
pub mod wiener;

pub use blr::{blr_posterior, blr_posterior_condition, BlrPosterior, PriorVariance, RowPosterior};
pub use grid::{
    grid_posterior_small, total_variation, Axis, GridParam, GridPosterior, MAX_GRID_POINTS,
};
pub use kalman::kalman_log_evidence;
pub use wiener::{wiener_deconvolve, wiener_filter, SignalPower};
