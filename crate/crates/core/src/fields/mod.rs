//! Vector fields, their randomized unbiased estimators and the random
//! streams that drive them.

pub mod contracts;
mod estimator;
mod field;
mod rng;

pub use estimator::{
    additive_noise_estimator, estimate_bias, subsample_estimator, AdditiveNoise,
    StochasticEstimator, Subsample, MAX_ENUMERATED_SUBSETS,
};
pub use field::{induced_one_norm, VectorField};
pub use rng::{RngStream, SUBSTREAM_BITS};
