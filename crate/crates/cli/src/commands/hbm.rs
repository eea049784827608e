//! `hbm`: hierarchical regression of terminal impacts on visits, damage,
//! region and category.

use std::collections::BTreeMap;

use impactor_core::hbm::{
    build_design, fit_hbm, region_labels, summarize, summarize_natural, write_draws_csv, write_summary_csv, HbmData,
};
use impactor_core::panel::Category;
use impactor_core::Error;
use serde::Serialize;

use crate::commands;
use crate::config::Resolved;
use crate::output::{atomically, create_dir, progress, write_csv, write_failures, write_json, write_text, FailureRow};
use crate::svg;
use crate::{CliError, Outcome};

#[derive(Debug, Serialize)]
struct DesignRow<'a> {
    entity_id: &'a str,
    phi: f64,
    mean_visits: f64,
    damage_rate: f64,
    region: &'a str,
    category: &'a str,
}

#[derive(Debug, Serialize)]
struct FitInfo {
    rows: usize,
    chains: usize,
    draws_per_chain: usize,
    divergences: usize,
    attempts: usize,
    seed: u64,
    max_rhat: Option<f64>,
    min_ess: Option<f64>,
    sparse_groups: Vec<(String, String)>,
}

fn design_rows(data: &HbmData) -> Vec<DesignRow<'_>> {
    let regions = region_labels();
    (0..data.len())
        .map(|i| DesignRow {
            entity_id: &data.entity_ids[i],
            phi: data.phi[i],
            mean_visits: data.scalings[0].inverse(data.x[i][1]),
            damage_rate: data.scalings[1].inverse(data.x[i][2]),
            region: regions[data.region_idx[i]],
            category: Category::ALL[data.category_idx[i]].label(),
        })
        .collect()
}

pub fn run(r: &Resolved) -> Result<Outcome, CliError> {
    let impacts: BTreeMap<String, f64> = commands::terminal_impacts(r)?
        .into_iter()
        .map(|(id, (_, phi))| (id, phi))
        .collect();
    let panel = commands::treated_all(r)?;
    let data = build_design(&impacts, &panel)?;
    let dir = r.dir("hbm");
    create_dir(&dir)?;
    write_csv(
        &dir.join("design.csv"),
        &design_rows(&data),
        &["entity_id", "phi", "mean_visits", "damage_rate", "region", "category"],
    )?;
    let sparse = data.sparse_groups();
    for (kind, label) in &sparse {
        progress(format_args!(
            "hbm: {kind} {label} has fewer than two rows; its effect is prior-dominated"
        ));
    }
    progress(format_args!("hbm: fitting {} rows", data.len()));

    let post = match fit_hbm(&data, &r.config.hbm) {
        Ok(p) => p,
        Err(e @ Error::NonConvergence { .. }) => {
            write_failures(&dir, &[FailureRow::new("", "hbm", &e)])?;
            return Ok(Outcome::Partial(1));
        }
        Err(e) => return Err(e.into()),
    };
    let rows = summarize(&post);
    let natural = summarize_natural(&post);
    atomically(&dir.join("hbm_summary.csv"), |tmp| write_summary_csv(&rows, tmp))?;
    atomically(&dir.join("hbm_natural.csv"), |tmp| write_summary_csv(&natural, tmp))?;
    atomically(&dir.join("hbm_draws.csv"), |tmp| write_draws_csv(&post, tmp))?;
    write_json(
        &dir.join("fit.json"),
        &FitInfo {
            rows: data.len(),
            chains: post.chains.len(),
            draws_per_chain: post.draws_per_chain,
            divergences: post.divergences,
            attempts: post.attempts,
            seed: post.seed,
            max_rhat: post.diagnostics.as_ref().map(|d| d.max_rhat),
            min_ess: post.diagnostics.as_ref().map(|d| d.min_ess),
            sparse_groups: sparse,
        },
    )?;
    let intervals: Vec<svg::Interval> = rows
        .iter()
        .map(|row| svg::Interval {
            label: row.parameter.clone(),
            outer: (row.q025, row.q975),
            inner: (row.q25, row.q75),
            center: row.q50,
            highlight: row.significant,
        })
        .collect();
    write_text(
        &dir.join("forest.svg"),
        &svg::forest(
            "posterior medians, 50% and 95% intervals (standardized features)",
            &intervals,
        ),
    )?;
    write_failures(&dir, &[])?;
    Ok(Outcome::Complete)
}
