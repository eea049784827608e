//! `evaluate`: strategy validation on pre-shock hold-out windows.

use impactor_core::evaluation::{
    aggregate, run_setting, select_best_model, write_aggregate_csv, write_selection_csv, write_validation_csv,
    EvalRecord, ExperimentSetting, SettingId,
};
use impactor_core::matching::{write_matching_csv, Strategy};
use serde::Serialize;

use crate::commands;
use crate::config::Resolved;
use crate::output::{atomically, create_dir, progress, write_csv, write_failures, FailureRow};
use crate::{CliError, Outcome};

#[derive(Debug, Serialize)]
struct ShareRow {
    setting: SettingId,
    strategy: Strategy,
    entities: usize,
    percent: f64,
}

pub fn run(r: &Resolved) -> Result<Outcome, CliError> {
    let cfg = &r.config;
    let control = commands::control(r)?;
    let dir = r.dir("evaluate");
    create_dir(&dir)?;

    let mut records: Vec<EvalRecord> = Vec::new();
    let mut failures = Vec::new();
    let mut shares = Vec::new();
    for &id in &cfg.settings {
        let setting = ExperimentSetting::by_id(id);
        if setting.test_end > cfg.windows.horizon {
            return Err(CliError::new(format!(
                "{id} needs {} days but the calendar has {}",
                setting.test_end, cfg.windows.horizon
            )));
        }
        let target = match id {
            SettingId::Setting1 => commands::treated(r)?,
            SettingId::Setting2 => commands::reference(r)?,
        };
        progress(format_args!(
            "evaluate {id}: {} entities x {} strategies",
            target.len(),
            Strategy::ALL.len()
        ));
        let result = run_setting(&setting, &target, &control, &cfg.bsts);
        failures.extend(
            result
                .failures
                .iter()
                .map(|f| FailureRow::new(&f.entity_id, &f.stage, &f.message)),
        );
        atomically(&dir.join(format!("matching_{id}.csv")), |tmp| {
            write_matching_csv(&result.matches, tmp)
        })?;

        let selection = select_best_model(&result.records, cfg.criterion)?;
        let name = match id {
            SettingId::Setting1 => "selection.csv".to_string(),
            SettingId::Setting2 => format!("selection_{id}.csv"),
        };
        atomically(&dir.join(name), |tmp| write_selection_csv(&selection, tmp))?;
        for (strategy, percent) in selection.percentages() {
            let entities = selection.chosen.values().filter(|(s, _)| *s == strategy).count();
            progress(format_args!("  {id} {strategy}: {percent:.1}% ({entities})"));
            shares.push(ShareRow {
                setting: id,
                strategy,
                entities,
                percent,
            });
        }
        records.extend(result.records);
    }

    atomically(&dir.join("validation.csv"), |tmp| write_validation_csv(&records, tmp))?;
    atomically(&dir.join("table2.csv"), |tmp| {
        write_aggregate_csv(&aggregate(&records, &cfg.settings), tmp)
    })?;
    write_csv(
        &dir.join("selection_summary.csv"),
        &shares,
        &["setting", "strategy", "entities", "percent"],
    )?;
    write_failures(&dir, &failures)?;
    Ok(Outcome::from_failures(failures.len()))
}
