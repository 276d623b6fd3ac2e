//! Stochastic Euler schemes for ordinary differential equations whose
//! right-hand side is only available through a randomized unbiased
//! estimator, together with the tools to check their behaviour:
//! Monte Carlo rate estimation, almost-sure convergence traces, matrix
//! propagators and asymptotic-normality diagnostics.

pub mod error;
pub mod fields;
pub mod grid;
pub mod io;
pub mod models;
pub mod propagator;
pub mod reference;
pub mod scheme;
pub mod stats;

pub use nalgebra::{DMatrix, DVector};

pub use error::{Error, Result};
pub use fields::{
    additive_noise_estimator, estimate_bias, subsample_estimator, AdditiveNoise, RngStream,
    StochasticEstimator, Subsample, VectorField,
};
pub use grid::{dyadic_partition, mesh, uniform_partition, Partition};
pub use reference::{solve_reference, solve_reference_with, sup_error, ReferenceOptions, ReferenceSolution};
pub use scheme::{deterministic_euler, path_eval, run_scheme, StepPath};
pub use propagator::{
    covariance_curve, discrete_propagator, gamma, limit_propagator, propagator_by_ode, sigma, CovarianceCurve,
    LimitOptions, PropagatorGrid, SigmaOptions,
};
pub use stats::{
    as_trace, fit_rate, gronwall_bound, normality_report, rms_sup_error, run_ensemble, run_replications,
    EnsembleResult, EnsembleSpec, NormalityReport, RateFit,
};
pub use models::{model_affine_sum, model_linear, model_logistic, model_subsampled_sum, ModelSpec};
