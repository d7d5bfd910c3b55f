//! Benchmark generation and evaluation metrics.

pub mod bench;
pub mod metrics;
pub mod sbc;

pub use bench::{
    edge_labels, gen_sparse_networks, off_diagonal, sample_off_diagonal, sample_sparse_network,
    BenchConfig, BenchNetwork, BenchmarkSuite,
};
pub use metrics::{
    auc, coverage_log_density, directed_outflow, sign_test_p, t_score, tscore_auc, DetectionReport,
};
pub use sbc::{rank_uniformity, sbc_rank};
