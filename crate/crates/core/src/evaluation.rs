//! Hold-out validation of the three covariate strategies and per-entity
//! model selection.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsts::{build_model, fit, fitted_mean, forecast_mean, BstsConfig};
use crate::error::{Error, Result};
use crate::matching::{choose_covariate, pearson_masked, CovariateChoice, Strategy};
use crate::panel::{Panel, PanelRole, StudyWindows};
use crate::stats::{self, derive_seed};

/// Mean absolute percentage error over days where `y` is present and
/// non-zero and `yhat` is present. Returns the error and the number of
/// excluded days.
pub fn mape(y: &[Option<f64>], yhat: &[Option<f64>]) -> Result<(f64, usize)> {
    if y.len() != yhat.len() {
        return Err(Error::Length(format!("mape on lengths {} and {}", y.len(), yhat.len())));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (a, b) in y.iter().zip(yhat) {
        if let (Some(a), Some(b)) = (a, b) {
            if *a != 0.0 {
                sum += ((a - b) / a).abs();
                used += 1;
            }
        }
    }
    if used == 0 {
        return Err(Error::InsufficientData("mape has no usable day".into()));
    }
    Ok((sum / used as f64, y.len() - used))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingId {
    Setting1,
    Setting2,
}

impl SettingId {
    pub fn label(self) -> &'static str {
        match self {
            SettingId::Setting1 => "setting1",
            SettingId::Setting2 => "setting2",
        }
    }
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SettingId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "setting1" | "1" => Ok(SettingId::Setting1),
            "setting2" | "2" => Ok(SettingId::Setting2),
            other => Err(Error::Parameter(format!("unknown setting {other:?}"))),
        }
    }
}

/// Training window `[0, train_end)` and test window `[test_start, test_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSetting {
    pub id: SettingId,
    pub train_end: usize,
    pub test_start: usize,
    pub test_end: usize,
    pub target_role: PanelRole,
    pub control_role: PanelRole,
}

impl ExperimentSetting {
    /// Shock-region entities, tested on the 50 days after training.
    pub fn setting1() -> Self {
        Self {
            id: SettingId::Setting1,
            train_end: 150,
            test_start: 150,
            test_end: 200,
            target_role: PanelRole::Treated,
            control_role: PanelRole::Control,
        }
    }

    /// Unaffected reference entities, tested on the remaining 250 days.
    pub fn setting2() -> Self {
        Self {
            id: SettingId::Setting2,
            train_end: 150,
            test_start: 150,
            test_end: 400,
            target_role: PanelRole::Treated,
            control_role: PanelRole::Control,
        }
    }

    pub fn by_id(id: SettingId) -> Self {
        match id {
            SettingId::Setting1 => Self::setting1(),
            SettingId::Setting2 => Self::setting2(),
        }
    }

    pub fn test_len(&self) -> usize {
        self.test_end - self.test_start
    }

    /// Model windows: train on `[0, n)` and forecast to the end of the test.
    pub fn windows(&self) -> Result<StudyWindows> {
        if self.test_start < self.train_end {
            return Err(Error::Windows("test window overlaps training".into()));
        }
        StudyWindows::new(self.train_end, self.train_end, self.test_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub setting: SettingId,
    pub entity_id: String,
    pub strategy: Strategy,
    pub split: Split,
    pub mape: f64,
    /// NaN when either series is constant on the split.
    pub pearson_r: f64,
    pub excluded_zero_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub entity_id: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingResult {
    pub setting: ExperimentSetting,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<Failure>,
    pub matches: Vec<(String, CovariateChoice)>,
}

fn metrics(
    setting: SettingId,
    id: &str,
    strategy: Strategy,
    split: Split,
    y: &[Option<f64>],
    yhat: &[f64],
) -> Result<EvalRecord> {
    let yhat: Vec<Option<f64>> = yhat.iter().map(|&v| Some(v)).collect();
    let (m, excluded) = mape(y, &yhat)?;
    Ok(EvalRecord {
        setting,
        entity_id: id.to_string(),
        strategy,
        split,
        mape: m,
        pearson_r: pearson_masked(y, &yhat).unwrap_or(f64::NAN),
        excluded_zero_days: excluded,
    })
}

/// Fits one entity under one strategy and scores train and test windows.
pub fn evaluate_entity(
    setting: &ExperimentSetting,
    entity_id: &str,
    strategy: Strategy,
    target: &Panel,
    control: &Panel,
    config: &BstsConfig,
) -> Result<([EvalRecord; 2], CovariateChoice)> {
    let windows = setting.windows()?;
    let series = target
        .series
        .get(entity_id)
        .ok_or_else(|| Error::entity(entity_id, "not in target panel"))?;
    let meta = &target.meta[entity_id];
    if series.len() < setting.test_end {
        return Err(Error::entity(
            entity_id,
            format!("series shorter than test end {}", setting.test_end),
        ));
    }
    let choice = choose_covariate(strategy, series, meta, control, &windows)?;
    let x = choice.filled()?;
    let mut cfg = *config;
    cfg.sampler.seed = derive_seed(
        config.sampler.seed,
        &format!("{}/{entity_id}/{}", setting.id.label(), strategy.label()),
    );
    let spec = build_model(series, x.as_deref(), &windows, &cfg)?;
    let (post, _) = fit(&spec)?;
    let fitted = fitted_mean(&post, &spec);
    let n = windows.train_end;
    let mean = forecast_mean(&post, &spec, x.as_ref().map(|x| &x[n..windows.horizon]))?;
    let y = series.as_real();
    let test_from = setting.test_start - n;
    let train = metrics(setting.id, entity_id, strategy, Split::Train, &y[..n], &fitted)?;
    let test = metrics(
        setting.id,
        entity_id,
        strategy,
        Split::Test,
        &y[setting.test_start..setting.test_end],
        &mean[test_from..test_from + setting.test_len()],
    )?;
    Ok(([train, test], choice))
}

/// Runs every (entity, strategy) pair. Failures are collected, never
/// propagated; results come back in entity then strategy order whatever
/// the thread count.
pub fn run_setting(setting: &ExperimentSetting, target: &Panel, control: &Panel, config: &BstsConfig) -> SettingResult {
    let jobs: Vec<(&String, Strategy)> = target
        .entity_ids()
        .flat_map(|id| Strategy::ALL.into_iter().map(move |s| (id, s)))
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(id, s)| evaluate_entity(setting, id, s, target, control, config))
        .collect();
    let mut result = SettingResult {
        setting: *setting,
        records: Vec::new(),
        failures: Vec::new(),
        matches: Vec::new(),
    };
    for ((id, s), outcome) in jobs.into_iter().zip(outcomes) {
        match outcome {
            Ok((recs, choice)) => {
                result.records.extend(recs);
                if s != Strategy::None {
                    result.matches.push((id.clone(), choice));
                }
            }
            Err(e) => result.failures.push(Failure {
                entity_id: id.clone(),
                stage: format!("{}/{}", setting.id.label(), s.label()),
                message: e.to_string(),
            }),
        }
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    TestMape,
    TestPearson,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "test_mape" | "mape" => Ok(Criterion::TestMape),
            "test_pearson" | "pearson" => Ok(Criterion::TestPearson),
            other => Err(Error::Parameter(format!("unknown selection criterion {other:?}"))),
        }
    }
}

impl Criterion {
    fn value(self, r: &EvalRecord) -> f64 {
        match self {
            Criterion::TestMape => r.mape,
            Criterion::TestPearson => r.pearson_r,
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Criterion::TestMape => a < b,
            Criterion::TestPearson => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub criterion: Criterion,
    pub chosen: BTreeMap<String, (Strategy, f64)>,
    /// Entities without any usable test record.
    pub excluded: Vec<String>,
}

impl Selection {
    /// Share of selected entities per strategy, in percent.
    pub fn percentages(&self) -> BTreeMap<Strategy, f64> {
        let total = self.chosen.len() as f64;
        Strategy::ALL
            .into_iter()
            .map(|s| {
                let k = self.chosen.values().filter(|(c, _)| *c == s).count() as f64;
                (s, if total > 0.0 { 100.0 * k / total } else { 0.0 })
            })
            .collect()
    }
}

/// Per entity, the strategy with the best test value; exact ties go to
/// the strategy with less covariate machinery.
pub fn select_best_model(records: &[EvalRecord], criterion: Criterion) -> Result<Selection> {
    let mut by_entity: BTreeMap<&str, BTreeMap<Strategy, f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == Split::Test) {
        let slot = by_entity.entry(&r.entity_id).or_default();
        if slot.insert(r.strategy, criterion.value(r)).is_some() {
            return Err(Error::entity(
                &r.entity_id,
                format!("two test records for strategy {}", r.strategy),
            ));
        }
    }
    let mut sel = Selection {
        criterion,
        chosen: BTreeMap::new(),
        excluded: Vec::new(),
    };
    for (id, values) in by_entity {
        let mut best: Option<(Strategy, f64)> = None;
        for s in Strategy::ALL {
            let Some(&v) = values.get(&s) else { continue };
            if v.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| criterion.better(v, b)) {
                best = Some((s, v));
            }
        }
        match best {
            Some(b) => {
                sel.chosen.insert(id.to_string(), b);
            }
            None => sel.excluded.push(id.to_string()),
        }
    }
    Ok(sel)
}

/// One row of the validation table: mean and sd of a metric over entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub setting: SettingId,
    pub strategy: Strategy,
    pub metric: String,
    pub split: Split,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

/// Mean ± sd per setting, strategy, metric and split, in that nesting
/// order. NaN correlations are left out of the Pearson rows.
pub fn aggregate(records: &[EvalRecord], settings: &[SettingId]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &setting in settings {
        for strategy in Strategy::ALL {
            for (metric, get) in [
                ("mape", (|r: &EvalRecord| r.mape) as fn(&EvalRecord) -> f64),
                ("pearson", |r| r.pearson_r),
            ] {
                for split in [Split::Train, Split::Test] {
                    let v: Vec<f64> = records
                        .iter()
                        .filter(|r| r.setting == setting && r.strategy == strategy && r.split == split)
                        .map(get)
                        .filter(|v| !v.is_nan())
                        .collect();
                    rows.push(AggregateRow {
                        setting,
                        strategy,
                        metric: metric.to_string(),
                        split,
                        mean: if v.is_empty() { f64::NAN } else { stats::mean(&v) },
                        sd: stats::sample_sd(&v),
                        count: v.len(),
                    });
                }
            }
        }
    }
    rows
}

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_validation_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    write_rows(records, path)
}

pub fn read_validation_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub entity_id: String,
    pub chosen_strategy: Strategy,
    pub criterion_value: f64,
}

/// `entity_id,chosen_strategy,criterion_value`.
pub fn write_selection_csv(sel: &Selection, path: &Path) -> Result<()> {
    let rows: Vec<SelectionRow> = sel
        .chosen
        .iter()
        .map(|(id, (s, v))| SelectionRow {
            entity_id: id.clone(),
            chosen_strategy: *s,
            criterion_value: *v,
        })
        .collect();
    write_rows(&rows, path)
}

pub fn read_selection_csv(path: &Path) -> Result<BTreeMap<String, Strategy>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize::<SelectionRow>()
        .map(|row| {
            row.map(|r| (r.entity_id, r.chosen_strategy))
                .map_err(|e| Error::csv(path, e))
        })
        .collect()
}
