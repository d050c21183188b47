//! Estimation of causal effects when instruments may violate the exclusion
//! restriction, using instrument-driven heteroskedasticity of the outcome to
//! separate the causal effect from selection bias.

pub mod cli;
pub mod error;
pub mod estimate;
pub mod estimators;
pub mod likelihood;
pub mod linalg;
pub mod mixture;
pub mod model;
mod reduce;
pub mod semiparam;
pub mod simulation;

pub use error::{Error, Result};
pub use model::{Dataset, Theta};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 42;
