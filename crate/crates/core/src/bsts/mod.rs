//! Bayesian structural time series: local level, weekly seasonal dummies,
//! and an optional static regression on one covariate.
//!
//! The latent states are integrated out with a Kalman filter, so the
//! sampler explores only the seven or eight hyperparameters. Level and
//! seasonal paths are then drawn per retained draw by simulation smoothing.

mod fit;
pub mod kalman;
mod model;

pub(crate) use fit::sample_checked;
pub use fit::{
    diagnostics, fit, fitted_mean, forecast_mean, posterior_predict, summarize, write_draws_csv, write_summary_json,
    ChainDraws, ParamSummary, Posterior, PredictiveDraws,
};
pub use model::{log_posterior, params_from_unconstrained, to_unconstrained, BstsDensity, LevelOffset, PARAM_NAMES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{StudyWindows, VisitSeries};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Total iterations per chain, warmup included.
    pub iterations_per_chain: usize,
    pub warmup: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Extra attempts before a fit is declared non-convergent. Each one
    /// doubles warmup and iterations and halves the gap between
    /// `target_accept` and 1.
    pub max_retries: usize,
    /// Largest tolerated share of divergent transitions among retained draws.
    pub max_divergence_rate: f64,
    /// When false, the first attempt is accepted whatever its diagnostics.
    pub require_convergence: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations_per_chain: 2000,
            warmup: 1000,
            seed: 0,
            target_accept: 0.8,
            max_tree_depth: 10,
            max_retries: 2,
            max_divergence_rate: 0.01,
            require_convergence: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::Config(format!(
                "chains = {} but diagnostics need at least 2",
                self.chains
            )));
        }
        if self.warmup >= self.iterations_per_chain {
            return Err(Error::Config(format!(
                "warmup ({}) must be smaller than iterations_per_chain ({})",
                self.warmup, self.iterations_per_chain
            )));
        }
        if self.iterations_per_chain - self.warmup < 4 {
            return Err(Error::Config("at least 4 retained draws per chain are required".into()));
        }
        if !(0.0 < self.target_accept && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::Config("max_tree_depth must be positive".into()));
        }
        Ok(())
    }

    pub fn nuts(&self, attempt: usize) -> impactor_mcmc::NutsSettings {
        let factor = 1usize << attempt;
        impactor_mcmc::NutsSettings {
            chains: self.chains,
            iterations: self.iterations_per_chain * factor,
            warmup: self.warmup * factor,
            seed: if attempt == 0 {
                self.seed
            } else {
                stats::derive_seed(self.seed, &format!("retry-{attempt}"))
            },
            target_accept: 1.0 - (1.0 - self.target_accept) / factor as f64,
            max_depth: self.max_tree_depth,
            ..Default::default()
        }
    }

    /// Retained draws across chains on the first attempt.
    pub fn retained(&self) -> usize {
        self.chains * (self.iterations_per_chain - self.warmup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BstsConfig {
    pub season_length: usize,
    pub prior_scale: f64,
    pub beta_prior_scale: f64,
    pub standardize: bool,
    pub sampler: SamplerConfig,
}

impl Default for BstsConfig {
    fn default() -> Self {
        Self {
            season_length: 7,
            prior_scale: 2.5,
            beta_prior_scale: 2.5,
            standardize: true,
            sampler: SamplerConfig::default(),
        }
    }
}

impl BstsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.season_length < 2 {
            return Err(Error::Config(format!("season_length = {} < 2", self.season_length)));
        }
        if !(self.prior_scale > 0.0 && self.beta_prior_scale > 0.0) {
            return Err(Error::Config("prior scales must be positive".into()));
        }
        self.sampler.validate()
    }
}

/// Affine map between the original and the modelling scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub center: f64,
    pub scale: f64,
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling {
        center: 0.0,
        scale: 1.0,
    };

    fn fit(values: &[f64], standardize: bool) -> Self {
        if !standardize {
            return Self::IDENTITY;
        }
        let sd = stats::sample_sd(values);
        Scaling {
            center: stats::mean(values),
            scale: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.center + self.scale * z
    }
}

/// A training series ready for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub entity_id: String,
    /// Modelling-scale observations on `[0, n)`.
    pub y: Vec<Option<f64>>,
    /// Modelling-scale covariate on `[0, n)`.
    pub x: Option<Vec<f64>>,
    pub y_scaling: Scaling,
    pub x_scaling: Option<Scaling>,
    pub windows: StudyWindows,
    pub config: BstsConfig,
    pub level_offset: LevelOffset,
}

impl ModelSpec {
    pub fn train_len(&self) -> usize {
        self.y.len()
    }

    /// Number of likelihood terms.
    pub fn observed(&self) -> usize {
        self.y.iter().filter(|v| v.is_some()).count()
    }

    pub fn has_covariate(&self) -> bool {
        self.x.is_some()
    }

    pub fn dim(&self) -> usize {
        if self.has_covariate() {
            8
        } else {
            7
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        PARAM_NAMES[..self.dim()].iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn view(&self) -> kalman::SeriesView<'_> {
        kalman::SeriesView {
            y: &self.y,
            x: self.x.as_deref(),
            season: self.config.season_length,
        }
    }
}

/// Slices the training window and standardizes by its mean and sample
/// standard deviation. A covariate, when given, must cover the whole
/// calendar so it is available for prediction.
pub fn build_model(
    y: &VisitSeries,
    x: Option<&[f64]>,
    windows: &StudyWindows,
    config: &BstsConfig,
) -> Result<ModelSpec> {
    windows.validate()?;
    config.validate()?;
    let n = windows.train_end;
    if y.len() < n {
        return Err(Error::Length(format!(
            "series {} shorter than training window",
            y.entity_id
        )));
    }
    let train: Vec<Option<f64>> = y.values[..n].iter().map(|v| v.map(f64::from)).collect();
    let present: Vec<f64> = train.iter().flatten().copied().collect();
    let needed = 4 * config.season_length;
    if present.len() < needed {
        return Err(Error::InsufficientData(format!(
            "entity {} has {} training observations, need {needed}",
            y.entity_id,
            present.len()
        )));
    }
    let y_scaling = Scaling::fit(&present, config.standardize);

    let (x_train, x_scaling) = match x {
        None => (None, None),
        Some(x) => {
            if x.len() < windows.horizon {
                return Err(Error::Length(format!(
                    "covariate length {} does not cover the calendar of {} days",
                    x.len(),
                    windows.horizon
                )));
            }
            if let Some(t) = x[..windows.horizon].iter().position(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("covariate is not finite on day {t}")));
            }
            let s = Scaling::fit(&x[..n], config.standardize);
            (Some(x[..n].iter().map(|&v| s.forward(v)).collect()), Some(s))
        }
    };

    let y_model: Vec<Option<f64>> = train.iter().map(|v| v.map(|v| y_scaling.forward(v))).collect();
    let present_model: Vec<f64> = y_model.iter().flatten().copied().collect();
    let sd = stats::sample_sd(&present_model);
    let level_offset = LevelOffset {
        center: stats::mean(&present_model[..config.season_length]),
        width: if sd > 0.0 { 0.5 * sd } else { 1.0 },
    };

    Ok(ModelSpec {
        entity_id: y.entity_id.clone(),
        y: y_model,
        level_offset,
        x: x_train,
        y_scaling,
        x_scaling,
        windows: *windows,
        config: *config,
    })
}
