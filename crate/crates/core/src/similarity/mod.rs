//! Linear CKA built on the unbiased HSIC₁ estimator, minibatch aggregation,
//! layer-pair grids and layer-distance profiles.

mod cka;
mod hsic;
mod profile;

pub use cka::{
    cka_exact, cka_matrix, cka_minibatch, CkaConfig, CkaMatrix, MinibatchCka, DEFAULT_BATCH_SIZE,
    DEFAULT_NUM_SAMPLES,
};
pub use hsic::{gram, hsic1, hsic1_prepared, GramMatrix, PreparedGram, MIN_SAMPLES};
pub use profile::{
    bin_index, layer_distance_profile, normalized_depth, DistanceBin, LayerDistanceProfile,
};
