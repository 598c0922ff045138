//! Coupled hidden Markov model for multichannel seizure detection.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod inference;
pub mod learning;
pub mod model;
pub mod montage;
pub mod signal;

pub use error::{Error, Result};
