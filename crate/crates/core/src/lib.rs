//! Causal impact of an extreme shock on per-entity daily count series.
//!
//! Each entity's pre-shock visits are fit with a Bayesian structural time
//! series model, the posterior predictive gives a counterfactual for the
//! post-shock period, and the normalized gap between observed and
//! counterfactual visits is the impact. A hierarchical regression then
//! relates cumulative impacts to region, category and exogenous features.

pub mod bsts;
pub mod error;
pub mod evaluation;
pub mod hbm;
pub mod impact;
pub mod matching;
pub mod panel;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
