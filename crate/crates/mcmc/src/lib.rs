//! Gradient-based posterior sampling.
//!
//! A multinomial No-U-Turn sampler with dual-averaging step size and
//! windowed diagonal mass-matrix adaptation, plus split rank-normalized
//! R-hat and effective sample size diagnostics.
//!
//! Chains are independent: each one owns a ChaCha stream derived from
//! `(seed, chain index)`, so draws do not depend on how chains are
//! scheduled across threads.

mod adapt;
pub mod diagnostics;
mod nuts;

pub use diagnostics::{ess_bulk, ess_tail, split_rhat, Diagnostics, ParamDiagnostics};
pub use nuts::{sample, sample_chain, ChainOutput, ChainStats, NutsSettings, SampleOutput};

use thiserror::Error;

/// Failure to evaluate a log density at a point.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("log density evaluation failed: {0}")]
pub struct LogDensityError(pub String);

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("no finite initial point found after {0} attempts")]
    Initialization(usize),
    #[error("step size search diverged (epsilon = {0})")]
    StepSize(f64),
    #[error("invalid sampler settings: {0}")]
    Settings(String),
}

/// An unnormalized log density on R^d with its gradient.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn logp_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64, LogDensityError>;
}
