//! Run configuration: one TOML file, command-line overrides, and the
//! output directory resolution.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use impactor_core::bsts::BstsConfig;
use impactor_core::evaluation::{Criterion, SettingId};
use impactor_core::hbm::HbmConfig;
use impactor_core::matching::Strategy;
use impactor_core::panel::StudyWindows;
use impactor_core::synth::GenConfig;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

pub const OUTPUT_ENV: &str = "IMPACTOR_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "impactor-out";

/// Fixed covariate strategy, or the per-entity choice made by `evaluate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StrategyPolicy {
    Fixed(Strategy),
    #[default]
    Auto,
}

impl FromStr for StrategyPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(StrategyPolicy::Auto);
        }
        s.parse::<Strategy>()
            .map(StrategyPolicy::Fixed)
            .map_err(|_| format!("unknown strategy {s:?} (expected none, category, specific or auto)"))
    }
}

impl fmt::Display for StrategyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyPolicy::Fixed(s) => f.write_str(s.label()),
            StrategyPolicy::Auto => f.write_str("auto"),
        }
    }
}

impl Serialize for StrategyPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Input panel locations. Unset paths default to the files `simulate`
/// writes under `<output>/data`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub treated_visits: Option<PathBuf>,
    pub treated_meta: Option<PathBuf>,
    pub control_visits: Option<PathBuf>,
    pub control_meta: Option<PathBuf>,
    pub reference_visits: Option<PathBuf>,
    pub reference_meta: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub strategy: StrategyPolicy,
    /// Entities with pre-disaster mean visits at or below this are dropped.
    pub min_mean: f64,
    /// Start impact sums on the shock day instead of the day after.
    pub sum_from_landfall: bool,
    /// Average spend per visit, for economic loss in `terminal.json`.
    pub avg_spend: Option<f64>,
    pub settings: Vec<SettingId>,
    pub criterion: Criterion,
    /// Report horizons in days after the shock day.
    pub horizons: Vec<usize>,
    /// Calendar date of day 0, used to label report horizons.
    pub epoch: Option<String>,
    pub windows: StudyWindows,
    pub data: DataPaths,
    pub bsts: BstsConfig,
    pub hbm: HbmConfig,
    /// Generator settings; `seed` and `windows` come from the top level.
    pub simulate: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            output_dir: None,
            strategy: StrategyPolicy::Auto,
            min_mean: 100.0,
            sum_from_landfall: false,
            avg_spend: None,
            settings: vec![SettingId::Setting1, SettingId::Setting2],
            criterion: Criterion::TestMape,
            horizons: vec![30, 60, 120],
            epoch: None,
            windows: StudyWindows::default(),
            data: DataPaths::default(),
            bsts: BstsConfig::default(),
            hbm: HbmConfig::default(),
            simulate: GenConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub strategy: Option<StrategyPolicy>,
    pub min_mean: Option<f64>,
    pub sum_from_landfall: bool,
    pub output: Option<PathBuf>,
}

/// A validated configuration with every path resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub output: PathBuf,
    pub epoch: Option<NaiveDate>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::new(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::new(format!("{}: {}", path.display(), e.message)))
    }

    pub fn resolve(mut self, config_path: &Path, ov: &Overrides) -> Result<Resolved, CliError> {
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if ov.workers.is_some() {
            self.workers = ov.workers;
        }
        if let Some(s) = ov.strategy {
            self.strategy = s;
        }
        if let Some(m) = ov.min_mean {
            self.min_mean = m;
        }
        self.sum_from_landfall |= ov.sum_from_landfall;

        let base = config_path.parent().unwrap_or(Path::new("."));
        let output = match (&ov.output, &self.output_dir) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => base.join(p),
            (None, None) => std::env::var_os(OUTPUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
        };
        let data = output.join("data");
        let pick = |p: &Option<PathBuf>, name: &str| Some(p.as_ref().map_or_else(|| data.join(name), |p| base.join(p)));
        self.data = DataPaths {
            treated_visits: pick(&self.data.treated_visits, "treated_visits.csv"),
            treated_meta: pick(&self.data.treated_meta, "treated_meta.csv"),
            control_visits: pick(&self.data.control_visits, "control_visits.csv"),
            control_meta: pick(&self.data.control_meta, "control_meta.csv"),
            reference_visits: pick(&self.data.reference_visits, "reference_visits.csv"),
            reference_meta: pick(&self.data.reference_meta, "reference_meta.csv"),
        };

        self.simulate.seed = self.seed;
        self.simulate.windows = self.windows;
        self.simulate.season_length = self.bsts.season_length;
        self.bsts.sampler.seed = self.seed;
        self.hbm.sampler.seed = self.seed;

        let epoch = self
            .epoch
            .as_deref()
            .map(|s| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|e| CliError::new(format!("epoch {s:?} is not a YYYY-MM-DD date: {e}")))
            })
            .transpose()?;
        self.validate()?;
        Ok(Resolved {
            config: self,
            output,
            epoch,
        })
    }

    fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: impactor_core::Error| CliError::new(e.to_string());
        self.windows.validate().map_err(wrap)?;
        self.bsts.validate().map_err(wrap)?;
        self.hbm.validate().map_err(wrap)?;
        self.simulate.validate().map_err(wrap)?;
        if self.workers == Some(0) {
            return Err(CliError::new("workers must be at least 1"));
        }
        if !self.min_mean.is_finite() {
            return Err(CliError::new("min_mean must be finite"));
        }
        if let Some(s) = self.avg_spend {
            if !(s.is_finite() && s >= 0.0) {
                return Err(CliError::new("avg_spend must be a non-negative number"));
            }
        }
        if self.settings.is_empty() {
            return Err(CliError::new("settings must list at least one experiment setting"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(CliError::new(
                "horizons must be a non-empty list of positive day counts",
            ));
        }
        Ok(())
    }
}

impl Resolved {
    pub fn path(&self, p: &Option<PathBuf>) -> PathBuf {
        p.clone().expect("resolved data path")
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }
}
