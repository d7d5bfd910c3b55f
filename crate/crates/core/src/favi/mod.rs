//! Amortized forward-KL posterior over each region's measurement
//! hyper-parameters `(alpha, q, r)`: a temporal convolution encoder conditions
//! a masked autoregressive flow, trained on draws from the generative model.

pub mod encoder;
pub mod estimator;
pub mod flow;
pub mod train;

pub use encoder::{Encoder, EncoderArch};
pub use estimator::{
    from_unconstrained, log_jacobian, to_unconstrained, FaviArch, FaviNet, HpEstimator, RegionHyper,
};
pub use flow::{ConditionalFlow, FlowArch};
pub use train::{train_favi, train_on_stream, FaviTrainConfig, ModelStream, PairStream, TrainLog};
