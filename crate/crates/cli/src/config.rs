//! Layering of a flat settings file under command-line flags, and the
//! resolved record written beside every run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Why a command did not complete.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or settings; exit code 1.
    Usage(String),
    /// Anything that went wrong while running; exit code 2.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Reads `file` (if any) as a flat table, overlays every flag that was
/// given, and deserializes the result. Keys the run does not know are
/// rejected.
pub fn resolve<F: Serialize, R: DeserializeOwned>(file: Option<&Path>, flags: &F) -> Result<R, Failure> {
    let mut table = match file {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            text.parse::<toml::Table>()
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    if let Some((key, _)) = table.iter().find(|(_, v)| v.is_table()) {
        return Err(usage(format!("setting '{key}' is a section; the settings file must be flat")));
    }
    let given = toml::Table::try_from(flags).map_err(|e| usage(e.to_string()))?;
    table.extend(given);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| usage(e.message().to_string()))
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Writes the resolved settings as `<output>.run.toml`. Feeding that file
/// back through `--config` repeats the run.
pub fn write_run_config<R: Serialize>(command: &str, run: &R, output: &Path) -> anyhow::Result<PathBuf> {
    let path = sibling(output, ".run.toml");
    let body = toml::to_string(run).context("serializing run settings")?;
    fs::write(&path, format!("# resolved settings of `cgrgen {command}`\n{body}"))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Logs the resolved settings when a run has no output file to sit beside.
pub fn log_run_config<R: Serialize>(command: &str, run: &R) {
    match toml::to_string(run) {
        Ok(body) => log::info!("resolved settings of `cgrgen {command}`:\n{body}"),
        Err(e) => log::warn!("could not serialize settings: {e}"),
    }
}

/// Path of a setting that must be present after layering.
pub fn need<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| usage(format!("--{flag} is required (flag or settings file)")))
}
