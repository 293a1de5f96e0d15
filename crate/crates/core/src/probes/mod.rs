//! Feature pooling and class-information probes: k-NN, linear and MLP
//! probes, intermediate-layer concatenation and feature standardization.

mod features;
mod knn;
mod standardize;
mod sweep;
mod train;

pub use features::{
    concat_layers, pool_features, pool_tensor, FeatureMatrix, PoolMode, Provenance,
};
pub use knn::{knn_classify, knn_predict, l2_normalize_rows, KnnResult, DEFAULT_K};
pub use standardize::{apply_standardizer, fit_standardizer, Standardizer, STANDARDIZE_EPS};
pub use sweep::{block_output_layers, knn_depth_sweep, DepthSweep, DepthSweepRow};
pub use train::{
    learning_rate, train_probe, train_single, ProbeConfig, ProbeData, ProbeResult, ProbeRun,
    RunHyper, RunStatus, MOMENTUM, RUNNING_STATS_MOMENTUM,
};
