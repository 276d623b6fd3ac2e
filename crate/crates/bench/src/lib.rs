//! Shared fixtures for the benchmarks.

use stocheuler::{model_linear, DMatrix, DVector, ModelSpec, ReferenceSolution};

/// The 2x2 damped rotation used by the propagator suite.
pub fn rotation() -> ModelSpec {
    model_linear(
        DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
        DVector::from_column_slice(&[1.0, 0.0]),
        2.0,
    )
    .expect("valid model")
}

pub fn reference(model: &ModelSpec) -> ReferenceSolution {
    model.reference(1e-9, 1 << 12).expect("reference converges")
}
