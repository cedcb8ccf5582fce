//! Conditional variable importance: permutation, conditional-permutation,
//! Sobol-CPI and leave-one-covariate-out estimators of total Sobol indices,
//! with the learners, conditional sampler, inference and benchmarks they need.

// `!(a < b)` checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod learners;
pub mod pipeline;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use rng::RngSeed;
