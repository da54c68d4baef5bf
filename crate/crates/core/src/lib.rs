//! Modular jet diagnostics.
//!
//! Estimate local linear response maps ("jets") of tapped modules in a
//! supervised pipeline by probing the full pipeline with small input
//! perturbations, then compare jets by numerical rank and subspace similarity
//! to tell apart decompositions that risk alone cannot distinguish.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod identifiability;
pub mod jets;
pub mod numerics;
pub mod pipeline;
pub mod probes;
pub mod training;

pub use error::{Error, Result};
