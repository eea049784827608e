//! Output files are staged next to their destination and renamed into
//! place, so readers never see a partial file.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

fn staging(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::new(format!("cannot create {}: {e}", path.display())))
}

/// Runs `write` against a staging path, then renames it to `path`.
pub fn atomically<E: std::fmt::Display>(
    path: &Path,
    write: impl FnOnce(&Path) -> Result<(), E>,
) -> Result<(), CliError> {
    let tmp = staging(path);
    if let Err(e) = write(&tmp) {
        let _ = std::fs::remove_file(&tmp);
        return Err(CliError::new(format!("writing {}: {e}", path.display())));
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::new(format!("cannot move output into {}: {e}", path.display()))
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    atomically(path, |tmp| std::fs::write(tmp, text))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), CliError> {
    atomically(path, |tmp| -> Result<(), Box<dyn std::error::Error>> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(tmp)?;
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// One entity-level problem that did not stop the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRow {
    pub entity_id: String,
    pub stage: String,
    pub message: String,
}

impl FailureRow {
    pub fn new(entity_id: &str, stage: &str, message: impl std::fmt::Display) -> Self {
        Self {
            entity_id: entity_id.to_string(),
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

/// Always written, header only when nothing failed.
pub fn write_failures(dir: &Path, rows: &[FailureRow]) -> Result<(), CliError> {
    write_csv(&dir.join("failures.csv"), rows, &["entity_id", "stage", "message"])
}

/// Serialized progress line on stderr.
pub fn progress(msg: std::fmt::Arguments<'_>) {
    use std::io::Write;
    let stderr = std::io::stderr();
    let mut lock = stderr.lock();
    let _ = writeln!(lock, "{msg}");
}
