//! CSV tables with JSON sidecars.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentSpec;
use crate::error::CliError;

/// Round-trip formatting for table cells.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// One output file and the scalars that summarise it.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    pub summary: serde_json::Value,
}

impl Artifact {
    pub fn new(name: &str, columns: &[&'static str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.to_vec(),
            rows: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    tool: &'static str,
    version: &'static str,
    mode: &'static str,
    file: String,
    columns: &'a [&'static str],
    rows: usize,
    seed: u64,
    config: &'a crate::config::Settings,
    params: &'a catprobe::params::PhysicalParams,
    summary: &'a serde_json::Value,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<out>/<name>.csv` and `<out>/<name>.json`; returns the CSV path.
pub fn write_artifact(spec: &ExperimentSpec, artifact: &Artifact) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&spec.out).map_err(io_err(&spec.out))?;
    let csv_path = spec.out.join(format!("{}.csv", artifact.name));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Output {
        path: csv_path.clone(),
        source: e.into(),
    })?;
    let to_io = |e: csv::Error| CliError::Output {
        path: csv_path.clone(),
        source: e.into(),
    };
    w.write_record(&artifact.columns).map_err(to_io)?;
    for row in &artifact.rows {
        w.write_record(row).map_err(to_io)?;
    }
    w.flush().map_err(io_err(&csv_path))?;

    let sidecar = Sidecar {
        tool: "catprobe",
        version: env!("CARGO_PKG_VERSION"),
        mode: spec.mode.name(),
        file: format!("{}.csv", artifact.name),
        columns: &artifact.columns,
        rows: artifact.rows.len(),
        seed: spec.settings.seed(),
        config: &spec.settings,
        params: &spec.params,
        summary: &artifact.summary,
    };
    let json_path = spec.out.join(format!("{}.json", artifact.name));
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    std::fs::write(&json_path, text + "\n").map_err(io_err(&json_path))?;
    Ok(csv_path)
}
