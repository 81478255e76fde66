//! Report envelope and artifact writing.
//!
//! CSV artifacts start with one `#` header line carrying the tool version,
//! config hash and generation time; everything after it is deterministic.

use crate::config::Format;
use crate::{CliError, Outcome};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    /// Seed of any random draws the command made.
    pub seed: Option<u64>,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<R> {
    pub meta: ReportMeta,
    pub result: R,
}

impl<R: Serialize> Report<R> {
    /// Pretty-printed JSON with a trailing newline, fields in declaration order.
    pub fn to_json(&self) -> Result<String, CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::config("report", e.to_string()))?;
        text.push('\n');
        Ok(text)
    }
}

/// Serialized `report.json` for `result`, with `seed` recorded in the metadata.
pub fn envelope<R: Serialize>(meta: &ReportMeta, seed: Option<u64>, result: R) -> Result<String, CliError> {
    Report {
        meta: ReportMeta { seed, ..meta.clone() },
        result,
    }
    .to_json()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArtifactKind {
    /// A CSV body (header row plus data); written as `.csv` and/or `.json`.
    Table,
    /// A JSON document written verbatim.
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    /// File stem for tables, full file name for JSON documents.
    pub name: String,
    pub kind: ArtifactKind,
    pub content: String,
}

impl Artifact {
    pub fn table(name: &str, body: String) -> Self {
        Self {
            name: name.to_string(),
            kind: ArtifactKind::Table,
            content: body,
        }
    }

    pub fn json<T: Serialize>(name: &str, value: &T) -> Result<Self, CliError> {
        let mut content = serde_json::to_string_pretty(value).map_err(|e| CliError::config(name, e.to_string()))?;
        content.push('\n');
        Ok(Self {
            name: name.to_string(),
            kind: ArtifactKind::Json,
            content,
        })
    }
}

/// Writes `report.json` and every artifact under `dir`.
pub fn write_outcome(dir: &Path, meta: &ReportMeta, outcome: &Outcome, formats: &[Format]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write(dir, "report.json", &outcome.report)?;
    let header = csv_header(meta);
    for a in &outcome.artifacts {
        match a.kind {
            ArtifactKind::Json => write(dir, &a.name, &a.content)?,
            ArtifactKind::Table => {
                if formats.contains(&Format::Csv) {
                    write(dir, &format!("{}.csv", a.name), &format!("{header}\n{}", a.content))?;
                }
                if formats.contains(&Format::Json) {
                    let mut doc = serde_json::to_string_pretty(&table_to_json(&a.content))
                        .map_err(|e| CliError::config("report", e.to_string()))?;
                    doc.push('\n');
                    write(dir, &format!("{}.json", a.name), &doc)?;
                }
            }
        }
    }
    Ok(())
}

fn write(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| CliError::io(&path, e))
}

pub fn csv_header(meta: &ReportMeta) -> String {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!(
        "# {} {} command={} config_sha256={} generated_unix={now}",
        meta.tool, meta.version, meta.command, meta.config_sha256
    )
}

/// The deterministic part of a written CSV file: everything after the `#` header line.
pub fn csv_body(text: &str) -> &str {
    match text.strip_prefix('#') {
        Some(rest) => rest.split_once('\n').map_or("", |(_, body)| body),
        None => text,
    }
}

/// `{"columns": [...], "rows": [[...], ...]}`, with numeric cells as numbers.
pub fn table_to_json(body: &str) -> serde_json::Value {
    let mut lines = body.lines();
    let columns: Vec<&str> = lines.next().map(|l| l.split(',').collect()).unwrap_or_default();
    let rows: Vec<Vec<serde_json::Value>> = lines
        .map(|l| {
            l.split(',')
                .map(|cell| match cell.parse::<f64>() {
                    Ok(x) if x.is_finite() => serde_json::json!(x),
                    _ => serde_json::json!(cell),
                })
                .collect()
        })
        .collect();
    serde_json::json!({ "columns": columns, "rows": rows })
}
