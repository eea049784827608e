//! `report`: box-plot summaries of cumulative impact by category and
//! region at fixed horizons after the shock day.

use std::collections::BTreeMap;

use impactor_core::impact::read_cumulative_csv;
use impactor_core::panel::Category;
use impactor_core::stats::{mean, quantiles};
use serde::Serialize;

use crate::commands;
use crate::config::Resolved;
use crate::output::{create_dir, progress, write_csv, write_failures, write_text};
use crate::svg::{self, BoxStats};
use crate::{CliError, Outcome};

const REGIONS: [&str; 3] = ["SanJuan", "Metro", "Rural"];

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub horizon: usize,
    pub day: usize,
    pub date: String,
    pub category: String,
    pub region: String,
    pub entities: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn run(r: &Resolved) -> Result<Outcome, CliError> {
    let path = r.dir("impact").join("cumulative.csv");
    if !path.exists() {
        return Err(CliError::new(format!(
            "{} does not exist; run `impactor impact` first",
            path.display()
        )));
    }
    let mut phi: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for row in read_cumulative_csv(&path)? {
        phi.insert((row.entity_id, row.day), row.phi_mean);
    }
    let panel = commands::treated_all(r)?;
    let entities: Vec<&String> = {
        let mut ids: Vec<&String> = phi.keys().map(|(id, _)| id).collect();
        ids.dedup();
        ids
    };
    let dir = r.dir("report");
    create_dir(&dir)?;

    let w = r.config.windows;
    let mut rows = Vec::new();
    for &h in &r.config.horizons {
        let day = w.shock_day + h;
        if day >= w.horizon {
            progress(format_args!(
                "report: horizon {h} reaches day {day}, past the calendar end; skipped"
            ));
            continue;
        }
        let date = r
            .epoch
            .map(|e| (e + chrono::Days::new(day as u64)).format("%Y-%m-%d").to_string())
            .unwrap_or_default();
        let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for id in &entities {
            let (Some(meta), Some(&v)) = (panel.meta.get(*id), phi.get(&((*id).clone(), day))) else {
                continue;
            };
            let Some(region) = meta.region.index() else {
                continue;
            };
            cells.entry((meta.category.index(), region)).or_default().push(v);
        }
        let mut groups = Vec::new();
        for (ci, category) in Category::ALL.iter().enumerate() {
            let mut boxes = Vec::new();
            for (ri, region) in REGIONS.iter().enumerate() {
                let Some(values) = cells.get(&(ci, ri)) else {
                    boxes.push(None);
                    continue;
                };
                let q = quantiles(values, &[0.0, 0.25, 0.5, 0.75, 1.0]);
                rows.push(ReportRow {
                    horizon: h,
                    day,
                    date: date.clone(),
                    category: category.label().to_string(),
                    region: region.to_string(),
                    entities: values.len(),
                    min: q[0],
                    q25: q[1],
                    median: q[2],
                    q75: q[3],
                    max: q[4],
                    mean: mean(values),
                });
                boxes.push(Some(BoxStats {
                    min: q[0],
                    q25: q[1],
                    median: q[2],
                    q75: q[3],
                    max: q[4],
                }));
            }
            groups.push((category.label().to_string(), boxes));
        }
        let title = if date.is_empty() {
            format!("cumulative impact {h} days after the shock (day {day})")
        } else {
            format!("cumulative impact {h} days after the shock ({date})")
        };
        write_text(
            &dir.join(format!("phi_h{h}.svg")),
            &svg::boxplot(&title, "Phi", &REGIONS, &groups),
        )?;
    }
    write_csv(
        &dir.join("report.csv"),
        &rows,
        &[
            "horizon", "day", "date", "category", "region", "entities", "min", "q25", "median", "q75", "max", "mean",
        ],
    )?;
    write_failures(&dir, &[])?;
    progress(format_args!("report: {} rows", rows.len()));
    Ok(Outcome::Complete)
}
