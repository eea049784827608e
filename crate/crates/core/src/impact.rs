//! Point-wise and cumulative impact in units of business-as-usual days,
//! and their conversion to a currency loss.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bsts::PredictiveDraws;
use crate::error::{Error, Result};
use crate::panel::{StudyWindows, VisitSeries};
use crate::stats;

const BAND: [f64; 5] = [0.025, 0.05, 0.5, 0.95, 0.975];

/// Mean and quantiles of a set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub q025: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub q975: f64,
}

impl Band {
    pub fn of(draws: &[f64]) -> Self {
        let q = stats::quantiles(draws, &BAND);
        Band {
            mean: stats::mean(draws),
            q025: q[0],
            q05: q[1],
            q50: q[2],
            q95: q[3],
            q975: q[4],
        }
    }

    fn scaled(&self, k: f64) -> Self {
        Band {
            mean: self.mean * k,
            q025: self.q025 * k,
            q05: self.q05 * k,
            q50: self.q50 * k,
            q95: self.q95 * k,
            q975: self.q975 * k,
        }
    }
}

/// Point-wise impact `φ_t = (y_t − ŷ_t) / ȳ` per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactSeries {
    pub entity_id: String,
    pub ybar: f64,
    /// First day of the window; the window is `[first_day, first_day + len)`.
    pub first_day: usize,
    /// Per day, the draws of φ, or `None` when `y_t` is missing.
    pub draws: Vec<Option<Vec<f64>>>,
}

impl ImpactSeries {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn day(&self, j: usize) -> usize {
        self.first_day + j
    }

    pub fn rows(&self) -> usize {
        self.draws.iter().flatten().map(Vec::len).next().unwrap_or(0)
    }

    pub fn summary(&self) -> ImpactBands {
        ImpactBands {
            entity_id: self.entity_id.clone(),
            first_day: self.first_day,
            bands: self.draws.iter().map(|d| d.as_deref().map(Band::of)).collect(),
        }
    }
}

/// Per-day bands of an [`ImpactSeries`] without the draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactBands {
    pub entity_id: String,
    pub first_day: usize,
    pub bands: Vec<Option<Band>>,
}

/// First impact day: the day after landfall, or landfall itself when
/// `include_landfall` is set.
pub fn impact_start(windows: &StudyWindows, include_landfall: bool) -> usize {
    if include_landfall {
        windows.shock_day
    } else {
        windows.shock_day + 1
    }
}

pub fn pointwise_impact(
    y_obs: &VisitSeries,
    draws: &PredictiveDraws,
    ybar: f64,
    windows: &StudyWindows,
    include_landfall: bool,
) -> Result<ImpactSeries> {
    if !(ybar > 0.0 && ybar.is_finite()) {
        return Err(Error::Parameter(format!("normalizer ybar = {ybar} must be positive")));
    }
    let start = impact_start(windows, include_landfall);
    let end = windows.horizon;
    if draws.start > start || draws.start + draws.horizon != end {
        return Err(Error::Length(format!(
            "predictive draws cover [{}, {}) but impact needs [{start}, {end})",
            draws.start,
            draws.start + draws.horizon
        )));
    }
    if y_obs.len() < end {
        return Err(Error::Length(format!(
            "series {} has {} days, impact needs {end}",
            y_obs.entity_id,
            y_obs.len()
        )));
    }
    if draws.rows() == 0 {
        return Err(Error::InsufficientData("no predictive draws".into()));
    }
    let out = (start..end)
        .map(|t| {
            y_obs.values[t].map(|y| {
                let y = f64::from(y);
                draws.day(t).into_iter().map(|yhat| (y - yhat) / ybar).collect()
            })
        })
        .collect();
    Ok(ImpactSeries {
        entity_id: y_obs.entity_id.clone(),
        ybar,
        first_day: start,
        draws: out,
    })
}

/// Running sums of φ per draw. Missing days add 0 and are counted in
/// `gap_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeImpact {
    pub entity_id: String,
    pub ybar: f64,
    pub first_day: usize,
    pub gap_count: usize,
    /// `rows × len` running sums, row-major.
    pub running: Vec<f64>,
    pub rows: usize,
    pub bands: Vec<Band>,
}

impl CumulativeImpact {
    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn day(&self, j: usize) -> usize {
        self.first_day + j
    }

    /// Per-draw running sums on window offset `j`.
    pub fn draws_at(&self, j: usize) -> Vec<f64> {
        let len = self.running.len() / self.rows;
        self.running.iter().skip(j).step_by(len).copied().collect()
    }

    pub fn terminal_draws(&self) -> Vec<f64> {
        self.draws_at(self.len() - 1)
    }

    pub fn terminal(&self) -> Band {
        self.bands[self.len() - 1]
    }

    /// Band on absolute `day`, when inside the window.
    pub fn band_on(&self, day: usize) -> Option<Band> {
        day.checked_sub(self.first_day).and_then(|j| self.bands.get(j).copied())
    }

    pub fn summary(&self) -> CumulativeBands {
        CumulativeBands {
            entity_id: self.entity_id.clone(),
            first_day: self.first_day,
            bands: self.bands.clone(),
        }
    }
}

/// Per-day bands of a [`CumulativeImpact`] without the draws.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeBands {
    pub entity_id: String,
    pub first_day: usize,
    pub bands: Vec<Band>,
}

pub fn cumulative_impact(impact: &ImpactSeries) -> Result<CumulativeImpact> {
    if impact.is_empty() {
        return Err(Error::InsufficientData(format!(
            "empty impact series for {}",
            impact.entity_id
        )));
    }
    let rows = impact.rows();
    if rows == 0 {
        return Err(Error::InsufficientData(format!(
            "no observed impact day for {}",
            impact.entity_id
        )));
    }
    let len = impact.len();
    let mut running = vec![0.0; rows * len];
    let mut acc = vec![0.0; rows];
    for (j, day) in impact.draws.iter().enumerate() {
        if let Some(d) = day {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        for (r, a) in acc.iter().enumerate() {
            running[r * len + j] = *a;
        }
    }
    let mut cum = CumulativeImpact {
        entity_id: impact.entity_id.clone(),
        ybar: impact.ybar,
        first_day: impact.first_day,
        gap_count: impact.draws.iter().filter(|d| d.is_none()).count(),
        running,
        rows,
        bands: Vec::with_capacity(len),
    };
    cum.bands = (0..len).map(|j| Band::of(&cum.draws_at(j))).collect();
    Ok(cum)
}

/// Terminal cumulative impact converted to currency: `φ · ȳ · spend`.
pub fn economic_loss(cum: &CumulativeImpact, avg_spend: f64, ybar: f64) -> Result<Band> {
    if !(avg_spend > 0.0 && avg_spend.is_finite()) {
        return Err(Error::Parameter(format!("average spend {avg_spend} must be positive")));
    }
    if !(ybar > 0.0 && ybar.is_finite()) {
        return Err(Error::Parameter(format!("normalizer ybar = {ybar} must be positive")));
    }
    if cum.is_empty() {
        return Err(Error::InsufficientData("empty cumulative impact".into()));
    }
    Ok(cum.terminal().scaled(ybar * avg_spend))
}

/// Terminal figures of one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSummary {
    pub entity_id: String,
    pub ybar: f64,
    pub first_day: usize,
    pub last_day: usize,
    pub gap_count: usize,
    pub phi: Band,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<Band>,
}

pub fn terminal_summary(cum: &CumulativeImpact, avg_spend: Option<f64>) -> Result<TerminalSummary> {
    Ok(TerminalSummary {
        entity_id: cum.entity_id.clone(),
        ybar: cum.ybar,
        first_day: cum.first_day,
        last_day: cum.day(cum.len() - 1),
        gap_count: cum.gap_count,
        phi: cum.terminal(),
        loss: avg_spend.map(|s| economic_loss(cum, s, cum.ybar)).transpose()?,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `entity_id,day,phi_mean,phi_q05,phi_q50,phi_q95`; missing days leave
/// the numeric fields empty.
pub fn write_impact_csv(series: &[ImpactBands], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "entity_id,day,phi_mean,phi_q05,phi_q50,phi_q95").map_err(io)?;
    for s in series {
        for (j, band) in s.bands.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.entity_id,
                s.first_day + j,
                fmt_opt(band.map(|b| b.mean)),
                fmt_opt(band.map(|b| b.q05)),
                fmt_opt(band.map(|b| b.q50)),
                fmt_opt(band.map(|b| b.q95)),
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// `entity_id,day,Phi_mean,Phi_q05,Phi_q50,Phi_q95`.
pub fn write_cumulative_csv(series: &[CumulativeBands], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "entity_id,day,Phi_mean,Phi_q05,Phi_q50,Phi_q95").map_err(io)?;
    for s in series {
        for (j, b) in s.bands.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.entity_id,
                s.first_day + j,
                b.mean,
                b.q05,
                b.q50,
                b.q95
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// JSON object keyed by entity id.
pub fn write_terminal_json(rows: &[TerminalSummary], path: &Path) -> Result<()> {
    let map: BTreeMap<&str, &TerminalSummary> = rows.iter().map(|r| (r.entity_id.as_str(), r)).collect();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &map)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row of `cumulative.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeRow {
    pub entity_id: String,
    pub day: usize,
    #[serde(rename = "Phi_mean")]
    pub phi_mean: f64,
    #[serde(rename = "Phi_q05")]
    pub phi_q05: f64,
    #[serde(rename = "Phi_q50")]
    pub phi_q50: f64,
    #[serde(rename = "Phi_q95")]
    pub phi_q95: f64,
}

pub fn read_cumulative_csv(path: &Path) -> Result<Vec<CumulativeRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}
