//! Pairwise sampling weights for multistage household designs, and a
//! sampling-weighted Bayesian quantile regression to use them with.

pub mod alq;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod popgen;
pub mod weights;

pub use error::{Error, Result};
