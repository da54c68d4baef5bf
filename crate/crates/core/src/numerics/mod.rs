//! Dense linear-algebra substrate and random streams.

mod linalg;
mod matrix;
mod rng;

pub use linalg::{
    cholesky, orthonormalize_rows, row_orthonormality_error, singular_values, solve, solve_spd,
    svd, Svd, SYMMETRY_TOL,
};
pub use matrix::{axpy, dot, norm, Matrix};
pub use rng::{gaussian, streams, RngStream};

/// Dense real vector.
pub type Vector = Vec<f64>;
