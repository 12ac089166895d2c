//! CSV tables and JSON summaries.

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Format, RunConfig};

/// Column-major plot data. Missing cells are written empty in CSV and as
/// `null` in JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<(&'static str, &'static str)>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    /// `columns` as `(name, unit)`.
    pub fn new(columns: &[(&'static str, &'static str)]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_all(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| Some(v)).collect());
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|(n, _)| *n == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    fn write_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.columns.iter().map(|(n, u)| format!("{n} [{u}]")))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.map_or(String::new(), |x| x.to_string())))?;
        }
        w.flush()
    }

    fn to_json(&self) -> Value {
        json!({
            "columns": self.columns.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
            "units": self.columns.iter().map(|(_, u)| *u).collect::<Vec<_>>(),
            "rows": self.rows,
        })
    }
}

/// Everything one subcommand emits.
#[derive(Debug, Clone, Default)]
pub struct Artifact {
    /// Named tables; the first is the primary curve file.
    pub tables: Vec<(&'static str, Table)>,
    pub summary: Map<String, Value>,
}

impl Artifact {
    pub fn note<T: Serialize>(&mut self, key: &str, value: T) {
        self.summary.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }
}

fn with_suffix(stem: &Path, tag: Option<&str>, ext: &str) -> PathBuf {
    let mut name = stem.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if let Some(tag) = tag {
        name.push('_');
        name.push_str(tag);
    }
    name.push('.');
    name.push_str(ext);
    stem.with_file_name(name)
}

/// Writes the artifact under `cfg.out` and returns the files written.
///
/// CSV format: one CSV per table (`stem.csv`, then `stem_<name>.csv`) and
/// a `stem.json` sidecar. JSON format: a single `stem.json` holding the
/// tables as well.
pub fn write(artifact: &Artifact, cfg: &RunConfig) -> io::Result<Vec<PathBuf>> {
    if let Some(dir) = cfg.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut files = vec![];
    let mut doc = Map::new();
    doc.insert("config".into(), serde_json::to_value(cfg).map_err(io::Error::other)?);
    doc.insert("summary".into(), Value::Object(artifact.summary.clone()));
    match cfg.format {
        Format::Csv => {
            let mut names = vec![];
            for (i, (name, table)) in artifact.tables.iter().enumerate() {
                let path = with_suffix(&cfg.out, (i > 0).then_some(*name), "csv");
                table.write_csv(&path)?;
                names.push(path.file_name().unwrap().to_string_lossy().into_owned());
                files.push(path);
            }
            doc.insert("files".into(), json!(names));
        }
        Format::Json => {
            let tables: Map<String, Value> = artifact.tables.iter().map(|(n, t)| (n.to_string(), t.to_json())).collect();
            doc.insert("tables".into(), Value::Object(tables));
        }
    }
    let path = with_suffix(&cfg.out, None, "json");
    let mut text = serde_json::to_string_pretty(&Value::Object(doc)).map_err(io::Error::other)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    files.push(path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(with_suffix(Path::new("a/b"), None, "csv"), PathBuf::from("a/b.csv"));
        assert_eq!(with_suffix(Path::new("b"), Some("mean"), "csv"), PathBuf::from("b_mean.csv"));
    }

    #[test]
    fn csv_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(&[("t", "time"), ("S", "1")]);
        t.push(vec![Some(0.5), None]);
        let path = dir.path().join("x.csv");
        t.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "t [time],S [1]\n0.5,\n");
    }
}
