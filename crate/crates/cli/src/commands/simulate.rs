//! `simulate`: synthetic panels and their ground truth under `<out>/data`.

use impactor_core::panel::save_panel;
use impactor_core::synth::{generate_panel, write_truth_csv};

use crate::config::Resolved;
use crate::output::{atomically, create_dir, progress};
use crate::{CliError, Outcome};

pub fn run(r: &Resolved) -> Result<Outcome, CliError> {
    let panels = generate_panel(&r.config.simulate)?;
    let dir = r.dir("data");
    create_dir(&dir)?;
    let d = &r.config.data;
    let save = |panel, visits: &std::path::Path, meta: &std::path::Path| -> Result<(), CliError> {
        for p in [visits, meta] {
            if let Some(parent) = p.parent() {
                create_dir(parent)?;
            }
        }
        let staged_meta = meta.with_extension("csv.staged");
        atomically(visits, |tmp| save_panel(panel, tmp, &staged_meta))?;
        atomically(meta, |tmp| std::fs::rename(&staged_meta, tmp))
    };
    save(&panels.treated, &r.path(&d.treated_visits), &r.path(&d.treated_meta))?;
    save(&panels.control, &r.path(&d.control_visits), &r.path(&d.control_meta))?;
    if let Some(reference) = &panels.reference {
        save(reference, &r.path(&d.reference_visits), &r.path(&d.reference_meta))?;
    }
    atomically(&dir.join("truth.csv"), |tmp| write_truth_csv(&panels.truth, tmp))?;
    progress(format_args!(
        "simulate: {} treated, {} control, {} reference entities written to {}",
        panels.treated.len(),
        panels.control.len(),
        panels.reference.as_ref().map_or(0, |p| p.len()),
        dir.display()
    ));
    Ok(Outcome::Complete)
}
