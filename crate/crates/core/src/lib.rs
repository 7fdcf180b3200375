//! Tests for hypotheses about correlation matrices of one or several groups.

pub mod cli;
pub mod combined;
pub mod error;
pub mod estimators;
pub mod hypotheses;
pub mod linalg;
pub mod matops;
pub mod pipeline;
pub mod quadform;
pub mod resampling;
pub mod rng;
pub mod simlab;

pub use error::{Error, Result};
