//! `impact`: per-entity counterfactual fits, point-wise and cumulative
//! impacts, category-region aggregates, and one figure per entity.

use std::collections::BTreeMap;

use impactor_core::bsts::{build_model, fit, fitted_mean, posterior_predict};
use impactor_core::evaluation::read_selection_csv;
use impactor_core::impact::{
    cumulative_impact, impact_start, pointwise_impact, terminal_summary, write_cumulative_csv, write_impact_csv,
    write_terminal_json, Band, CumulativeBands, ImpactBands, TerminalSummary,
};
use impactor_core::matching::{choose_covariate, write_matching_csv, CovariateChoice, Strategy};
use impactor_core::panel::{pre_disaster_mean, Panel};
use impactor_core::stats::{derive_seed, mean, quantiles};
use rayon::prelude::*;
use serde::Serialize;

use crate::commands;
use crate::config::{Resolved, StrategyPolicy};
use crate::output::{atomically, create_dir, progress, write_csv, write_failures, write_text, FailureRow};
use crate::svg;
use crate::{CliError, Outcome};

struct EntityImpact {
    impact: ImpactBands,
    cumulative: CumulativeBands,
    terminal: TerminalSummary,
    choice: CovariateChoice,
    fit: FitRow,
    figure: String,
}

#[derive(Debug, Serialize)]
struct FitRow {
    entity_id: String,
    strategy: Strategy,
    max_rhat: f64,
    min_ess: f64,
    divergences: usize,
    attempts: usize,
}

#[derive(Debug, Serialize)]
struct AggregateRow {
    category: String,
    region: String,
    entities: usize,
    terminal_day: usize,
    phi_mean: f64,
    phi_median: f64,
    phi_min: f64,
    phi_max: f64,
}

fn strategies(r: &Resolved, treated: &Panel) -> Result<BTreeMap<String, Strategy>, CliError> {
    match r.config.strategy {
        StrategyPolicy::Fixed(s) => Ok(treated.entity_ids().map(|id| (id.clone(), s)).collect()),
        StrategyPolicy::Auto => {
            let path = r.dir("evaluate").join("selection.csv");
            if !path.exists() {
                return Err(CliError::new(format!(
                    "strategy = auto needs {}; run `impactor evaluate` first or pass --strategy",
                    path.display()
                )));
            }
            let chosen = read_selection_csv(&path)?;
            Ok(treated
                .entity_ids()
                .map(|id| {
                    let s = chosen.get(id).copied().unwrap_or_else(|| {
                        progress(format_args!("impact: {id} has no selection, using {}", Strategy::None));
                        Strategy::None
                    });
                    (id.clone(), s)
                })
                .collect())
        }
    }
}

fn estimate(
    r: &Resolved,
    id: &str,
    strategy: Strategy,
    treated: &Panel,
    control: &Panel,
) -> impactor_core::Result<EntityImpact> {
    let cfg = &r.config;
    let w = cfg.windows;
    let series = &treated.series[id];
    let meta = &treated.meta[id];
    let choice = choose_covariate(strategy, series, meta, control, &w)?;
    let x = choice.filled()?;
    let mut bsts = cfg.bsts;
    bsts.sampler.seed = derive_seed(cfg.seed, &format!("impact/{id}"));
    let spec = build_model(series, x.as_deref(), &w, &bsts)?;
    let (post, diag) = fit(&spec)?;
    let fitted = fitted_mean(&post, &spec);
    let pred = posterior_predict(&post, &spec, x.as_ref().map(|x| &x[w.train_end..w.horizon]))?;
    let ybar = pre_disaster_mean(series, &w)?;
    let imp = pointwise_impact(series, &pred, ybar, &w, cfg.sum_from_landfall)?;
    let cum = cumulative_impact(&imp)?;
    let terminal = terminal_summary(&cum, cfg.avg_spend)?;

    let bands: Vec<[f64; 3]> = (w.train_end..w.horizon)
        .map(|t| {
            let q = quantiles(&pred.day(t), &[0.05, 0.95]);
            [mean(&pred.day(t)), q[0], q[1]]
        })
        .collect();
    let figure = figure(
        r,
        id,
        strategy,
        series.as_real(),
        &fitted,
        &bands,
        &imp.summary(),
        &cum.summary(),
    );
    Ok(EntityImpact {
        impact: imp.summary(),
        cumulative: cum.summary(),
        terminal,
        choice,
        fit: FitRow {
            entity_id: id.to_string(),
            strategy,
            max_rhat: diag.max_rhat,
            min_ess: diag.min_ess,
            divergences: post.divergences(),
            attempts: post.attempts,
        },
        figure,
    })
}

#[allow(clippy::too_many_arguments)]
fn figure(
    r: &Resolved,
    id: &str,
    strategy: Strategy,
    y: Vec<Option<f64>>,
    fitted: &[f64],
    pred: &[[f64; 3]],
    imp: &ImpactBands,
    cum: &CumulativeBands,
) -> String {
    let w = r.config.windows;
    let days = |from: usize, len: usize| (from..from + len).map(|d| d as f64).collect::<Vec<_>>();
    let m = w.shock_day as f64;
    let counterfactual = svg::Panel::new(
        &format!("{id} ({strategy}): observed and counterfactual"),
        "day",
        "visits",
    )
    .band(
        days(w.train_end, pred.len()),
        pred.iter().map(|b| Some(b[1])).collect(),
        pred.iter().map(|b| Some(b[2])).collect(),
        svg::ORANGE,
    )
    .line(days(0, y.len()), y, svg::GREY, false)
    .line(
        days(0, fitted.len()),
        fitted.iter().map(|&v| Some(v)).collect(),
        svg::BLUE,
        false,
    )
    .line(
        days(w.train_end, pred.len()),
        pred.iter().map(|b| Some(b[0])).collect(),
        svg::ORANGE,
        true,
    )
    .vline(w.train_end as f64)
    .vline(m);
    let pointwise = svg::Panel::new("point-wise impact", "day", "phi")
        .band(
            days(imp.first_day, imp.bands.len()),
            imp.bands.iter().map(|b| b.map(|b| b.q05)).collect(),
            imp.bands.iter().map(|b| b.map(|b| b.q95)).collect(),
            svg::BLUE,
        )
        .line(
            days(imp.first_day, imp.bands.len()),
            imp.bands.iter().map(|b| b.map(|b| b.mean)).collect(),
            svg::BLUE,
            false,
        )
        .zero_line();
    let cumulative = svg::Panel::new("cumulative impact", "day", "Phi")
        .band(
            days(cum.first_day, cum.bands.len()),
            cum.bands.iter().map(|b| Some(b.q05)).collect(),
            cum.bands.iter().map(|b| Some(b.q95)).collect(),
            svg::GREEN,
        )
        .line(
            days(cum.first_day, cum.bands.len()),
            cum.bands.iter().map(|b| Some(b.mean)).collect(),
            svg::GREEN,
            false,
        )
        .zero_line();
    svg::stacked(&[counterfactual, pointwise, cumulative], 260.0)
}

fn aggregates(treated: &Panel, done: &[EntityImpact]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(usize, usize, String, String), Vec<&TerminalSummary>> = BTreeMap::new();
    for e in done {
        let meta = &treated.meta[&e.terminal.entity_id];
        let key = (
            meta.category.index(),
            meta.region.index().unwrap_or(usize::MAX),
            meta.category.label().to_string(),
            meta.region.label().to_string(),
        );
        cells.entry(key).or_default().push(&e.terminal);
    }
    cells
        .into_iter()
        .map(|((_, _, category, region), rows)| {
            let phi: Vec<f64> = rows.iter().map(|t| t.phi.mean).collect();
            let sorted = {
                let mut s = phi.clone();
                s.sort_by(f64::total_cmp);
                s
            };
            AggregateRow {
                category,
                region,
                entities: rows.len(),
                terminal_day: rows.iter().map(|t| t.last_day).max().unwrap_or(0),
                phi_mean: mean(&phi),
                phi_median: Band::of(&sorted).q50,
                phi_min: sorted[0],
                phi_max: sorted[sorted.len() - 1],
            }
        })
        .collect()
}

pub fn run(r: &Resolved) -> Result<Outcome, CliError> {
    let treated = commands::treated(r)?;
    let control = commands::control(r)?;
    let plan = strategies(r, &treated)?;
    let dir = r.dir("impact");
    let plots = dir.join("plots");
    create_dir(&plots)?;
    progress(format_args!(
        "impact: {} entities, impact window starts on day {}",
        plan.len(),
        impact_start(&r.config.windows, r.config.sum_from_landfall)
    ));

    let jobs: Vec<(&String, Strategy)> = plan.iter().map(|(id, s)| (id, *s)).collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(id, s)| {
            let out = estimate(r, id, s, &treated, &control);
            match &out {
                Ok(e) => progress(format_args!("impact: {id} Phi = {:.2}", e.terminal.phi.mean)),
                Err(err) => progress(format_args!("impact: {id} failed: {err}")),
            }
            out
        })
        .collect();

    let mut done = Vec::new();
    let mut failures = Vec::new();
    for ((id, s), out) in jobs.into_iter().zip(outcomes) {
        match out {
            Ok(e) => done.push(e),
            Err(err) => failures.push(FailureRow::new(id, &format!("impact/{s}"), err)),
        }
    }
    for e in &done {
        write_text(&plots.join(format!("{}.svg", e.terminal.entity_id)), &e.figure)?;
    }
    let impacts: Vec<ImpactBands> = done.iter().map(|e| e.impact.clone()).collect();
    let cumulative: Vec<CumulativeBands> = done.iter().map(|e| e.cumulative.clone()).collect();
    let terminal: Vec<TerminalSummary> = done.iter().map(|e| e.terminal.clone()).collect();
    let matches: Vec<(String, CovariateChoice)> = done
        .iter()
        .map(|e| (e.terminal.entity_id.clone(), e.choice.clone()))
        .collect();
    let fits: Vec<&FitRow> = done.iter().map(|e| &e.fit).collect();

    atomically(&dir.join("impact.csv"), |tmp| write_impact_csv(&impacts, tmp))?;
    atomically(&dir.join("cumulative.csv"), |tmp| {
        write_cumulative_csv(&cumulative, tmp)
    })?;
    atomically(&dir.join("terminal.json"), |tmp| write_terminal_json(&terminal, tmp))?;
    atomically(&dir.join("matching.csv"), |tmp| write_matching_csv(&matches, tmp))?;
    write_csv(
        &dir.join("fits.csv"),
        &fits,
        &[
            "entity_id",
            "strategy",
            "max_rhat",
            "min_ess",
            "divergences",
            "attempts",
        ],
    )?;
    write_csv(
        &dir.join("aggregates.csv"),
        &aggregates(&treated, &done),
        &[
            "category",
            "region",
            "entities",
            "terminal_day",
            "Phi_mean",
            "Phi_median",
            "Phi_min",
            "Phi_max",
        ],
    )?;
    write_failures(&dir, &failures)?;
    Ok(Outcome::from_failures(failures.len()))
}
