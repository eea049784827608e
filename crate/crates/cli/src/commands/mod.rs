pub mod evaluate;
pub mod hbm;
pub mod impact;
pub mod report;
pub mod simulate;

use std::path::Path;

use impactor_core::panel::{filter_eligible, load_panel, Panel, PanelRole};

use crate::config::Resolved;
use crate::CliError;

fn load(r: &Resolved, visits: &Path, meta: &Path, role: PanelRole) -> Result<Panel, CliError> {
    for p in [visits, meta] {
        if !p.exists() {
            return Err(CliError::new(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(load_panel(visits, meta, r.config.windows, role)?)
}

/// Treated panel restricted to entities above `min_mean`.
pub fn treated(r: &Resolved) -> Result<Panel, CliError> {
    eligible(r, treated_all(r)?, "treated")
}

pub fn treated_all(r: &Resolved) -> Result<Panel, CliError> {
    let d = &r.config.data;
    load(
        r,
        &r.path(&d.treated_visits),
        &r.path(&d.treated_meta),
        PanelRole::Treated,
    )
}

/// Terminal `Phi_mean` per entity from `<out>/impact/cumulative.csv`.
pub fn terminal_impacts(r: &Resolved) -> Result<std::collections::BTreeMap<String, (usize, f64)>, CliError> {
    let path = r.dir("impact").join("cumulative.csv");
    if !path.exists() {
        return Err(CliError::new(format!(
            "{} does not exist; run `impactor impact` first",
            path.display()
        )));
    }
    let mut out = std::collections::BTreeMap::new();
    for row in impactor_core::impact::read_cumulative_csv(&path)? {
        let e = out.entry(row.entity_id).or_insert((row.day, row.phi_mean));
        if row.day >= e.0 {
            *e = (row.day, row.phi_mean);
        }
    }
    Ok(out)
}

pub fn control(r: &Resolved) -> Result<Panel, CliError> {
    let d = &r.config.data;
    let p = load(
        r,
        &r.path(&d.control_visits),
        &r.path(&d.control_meta),
        PanelRole::Control,
    )?;
    if p.is_empty() {
        return Err(CliError::new("control panel is empty"));
    }
    Ok(p)
}

/// Unaffected panel scored in Setting 2, filtered like the treated one.
pub fn reference(r: &Resolved) -> Result<Panel, CliError> {
    let d = &r.config.data;
    let p = load(
        r,
        &r.path(&d.reference_visits),
        &r.path(&d.reference_meta),
        PanelRole::Treated,
    )?;
    eligible(r, p, "reference")
}

fn eligible(r: &Resolved, p: Panel, name: &str) -> Result<Panel, CliError> {
    let before = p.len();
    let p = filter_eligible(&p, r.config.min_mean);
    crate::output::progress(format_args!(
        "{name} panel: {} of {before} entities have pre-shock mean above {}",
        p.len(),
        r.config.min_mean
    ));
    if p.is_empty() {
        return Err(CliError::new(format!(
            "no {name} entity passes min_mean = {}",
            r.config.min_mean
        )));
    }
    Ok(p)
}
