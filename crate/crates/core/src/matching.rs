//! Covariate strategies: no covariate, an average over comparable control
//! entities, or the single most correlated control entity.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{BusinessMeta, Category, Panel, StudyWindows, VisitSeries};

/// Correlations closer than this are treated as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "category")]
    CategoryAverage,
    #[serde(rename = "specific")]
    SpecificBest,
}

impl Strategy {
    /// Ordered from fewest to most covariate machinery; used for tie-breaks.
    pub const ALL: [Strategy; 3] = [Strategy::None, Strategy::CategoryAverage, Strategy::SpecificBest];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::CategoryAverage => "category",
            Strategy::SpecificBest => "specific",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Strategy::None),
            "category" | "category_average" | "categoryaverage" => Ok(Strategy::CategoryAverage),
            "specific" | "specific_best" | "specificbest" => Ok(Strategy::SpecificBest),
            other => Err(Error::Parameter(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateChoice {
    pub strategy: Strategy,
    /// Brand, category label, or control entity id.
    pub source: Option<String>,
    /// Raw covariate on the full calendar; a day missing in every source is `None`.
    pub series: Option<Vec<Option<f64>>>,
    pub pearson_r: Option<f64>,
}

impl CovariateChoice {
    pub fn none() -> Self {
        Self {
            strategy: Strategy::None,
            source: None,
            series: None,
            pearson_r: None,
        }
    }

    /// The covariate with gaps filled, ready for model building.
    pub fn filled(&self) -> Result<Option<Vec<f64>>> {
        self.series.as_deref().map(fill_gaps).transpose()
    }
}

/// Sample Pearson correlation of two complete series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Length(format!("pearson on lengths {} and {}", a.len(), b.len())));
    }
    let pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pearson_pairs(&pairs)
}

/// Pearson correlation over the indices present in both series.
pub fn pearson_masked(a: &[Option<f64>], b: &[Option<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Length(format!("pearson on lengths {} and {}", a.len(), b.len())));
    }
    let pairs: Vec<(f64, f64)> = a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    pearson_pairs(&pairs)
}

fn pearson_pairs(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "pearson needs 2 joint observations, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("pearson of a constant series".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Grouping used for the averaged covariate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AverageKey {
    Brand(String),
    Category(Category),
}

impl AverageKey {
    fn matches(&self, meta: &BusinessMeta) -> bool {
        match self {
            AverageKey::Brand(b) => meta.brand.as_deref() == Some(b.as_str()),
            AverageKey::Category(c) => meta.category == *c,
        }
    }

    fn label(&self) -> String {
        match self {
            AverageKey::Brand(b) => format!("brand:{b}"),
            AverageKey::Category(c) => format!("category:{}", c.label()),
        }
    }
}

/// Per-day mean of the present values of the matching control entities.
pub fn category_average(control: &Panel, key: &AverageKey, windows: &StudyWindows) -> Result<Vec<Option<f64>>> {
    let members: Vec<&VisitSeries> = control
        .meta
        .values()
        .filter(|m| key.matches(m))
        .map(|m| &control.series[&m.entity_id])
        .collect();
    if members.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no control entity matches {}",
            key.label()
        )));
    }
    Ok((0..windows.horizon)
        .map(|t| {
            let present: Vec<f64> = members
                .iter()
                .filter_map(|s| s.values.get(t).copied().flatten())
                .map(f64::from)
                .collect();
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        })
        .collect())
}

/// Averaged covariate for `target`: same brand when the brand is known and
/// present among controls, otherwise same category.
pub fn average_covariate(target: &BusinessMeta, control: &Panel, windows: &StudyWindows) -> Result<CovariateChoice> {
    let brand = target
        .brand
        .as_ref()
        .filter(|b| !b.is_empty())
        .map(|b| AverageKey::Brand(b.clone()));
    let (key, series) = match brand.map(|k| category_average(control, &k, windows).map(|s| (k, s))) {
        Some(Ok(found)) => found,
        _ => {
            let key = AverageKey::Category(target.category);
            let s = category_average(control, &key, windows)?;
            (key, s)
        }
    };
    Ok(CovariateChoice {
        strategy: Strategy::CategoryAverage,
        source: Some(key.label()),
        series: Some(series),
        pearson_r: None,
    })
}

/// The same-category control entity whose training-window correlation
/// with `target` is largest. Ties go to the smaller entity id; constant
/// candidates are skipped.
pub fn best_match(
    target: &VisitSeries,
    control: &Panel,
    category: Category,
    windows: &StudyWindows,
) -> Result<CovariateChoice> {
    let n = windows.train_end;
    let y = target.as_real();
    let mut best: Option<(&str, f64)> = None;
    let mut candidates = 0;
    for meta in control.meta.values().filter(|m| m.category == category) {
        candidates += 1;
        let x = control.series[&meta.entity_id].as_real();
        let Ok(r) = pearson_masked(&y[..n], &x[..n]) else {
            continue;
        };
        if best.is_none_or(|(_, b)| r > b + TIE_TOLERANCE) {
            best = Some((&meta.entity_id, r));
        }
    }
    let (id, r) = best.ok_or_else(|| {
        Error::InsufficientData(format!(
            "no usable {} control among {candidates} candidates for {}",
            category.label(),
            target.entity_id
        ))
    })?;
    Ok(CovariateChoice {
        strategy: Strategy::SpecificBest,
        source: Some(id.to_string()),
        series: Some(control.series[id].as_real()),
        pearson_r: Some(r),
    })
}

/// Builds the covariate for one strategy.
pub fn choose_covariate(
    strategy: Strategy,
    target: &VisitSeries,
    meta: &BusinessMeta,
    control: &Panel,
    windows: &StudyWindows,
) -> Result<CovariateChoice> {
    match strategy {
        Strategy::None => Ok(CovariateChoice::none()),
        Strategy::CategoryAverage => average_covariate(meta, control, windows),
        Strategy::SpecificBest => best_match(target, control, meta.category, windows),
    }
}

/// Linear interpolation across interior gaps; leading and trailing gaps
/// take the nearest present value.
pub fn fill_gaps(series: &[Option<f64>]) -> Result<Vec<f64>> {
    let present: Vec<usize> = (0..series.len()).filter(|&t| series[t].is_some()).collect();
    let (&first, &last) = match (present.first(), present.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::InsufficientData("covariate has no observed day".into())),
    };
    let mut out = vec![0.0; series.len()];
    for (t, slot) in out.iter_mut().enumerate() {
        *slot = if t <= first {
            series[first].unwrap()
        } else if t >= last {
            series[last].unwrap()
        } else if let Some(v) = series[t] {
            v
        } else {
            let i = present.partition_point(|&p| p < t);
            let (l, r) = (present[i - 1], present[i]);
            let (vl, vr) = (series[l].unwrap(), series[r].unwrap());
            vl + (vr - vl) * (t - l) as f64 / (r - l) as f64
        };
    }
    Ok(out)
}

/// Writes `entity_id,strategy,source,pearson_r`.
pub fn write_matching_csv(rows: &[(String, CovariateChoice)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["entity_id", "strategy", "source", "pearson_r"])
        .map_err(|e| Error::csv(path, e))?;
    for (id, c) in rows {
        w.write_record([
            id.as_str(),
            c.strategy.label(),
            c.source.as_deref().unwrap_or(""),
            &c.pearson_r.map(|r| r.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
