//! Columnar plot data: plain-text tables plus a JSON index per kind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    Trajectory,
    Spectrum,
    ZeroHistory,
    DistanceHistory,
    Ladder,
}

impl PlotKind {
    pub const ALL: [PlotKind; 5] = [
        Self::Trajectory,
        Self::Spectrum,
        Self::ZeroHistory,
        Self::DistanceHistory,
        Self::Ladder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Trajectory => "trajectory",
            Self::Spectrum => "spectrum",
            Self::ZeroHistory => "zero-history",
            Self::DistanceHistory => "distance-history",
            Self::Ladder => "ladder",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| CliError::UnknownKind {
            kind: s.into(),
            known: Self::ALL.map(|k| k.name()).join(", "),
        })
    }
}

/// One data file. Rows are written in order with the columns given.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub kind: PlotKind,
    pub name: String,
    pub columns: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(kind: PlotKind, name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            kind,
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        let clean: String = self
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        format!("{}-{clean}.dat", self.kind.name())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# kind: {}", self.kind.name());
        let _ = writeln!(s, "# name: {}", self.name);
        let _ = writeln!(s, "# columns: {}", self.columns.join(" "));
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
struct IndexEntry<'a> {
    file: String,
    name: &'a str,
    columns: &'a [String],
    rows: usize,
}

/// Writes every table of `kind` under `dir` and a `<kind>-index.json`.
/// Fails with the list of available kinds when none is present.
pub fn emit_plot_data(tables: &[Table], kind: &str, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let kind = PlotKind::parse(kind)?;
    let chosen: Vec<&Table> = tables.iter().filter(|t| t.kind == kind).collect();
    if chosen.is_empty() {
        return Err(CliError::MissingKind {
            kind: kind.name().into(),
            available: available_kinds(tables).join(", "),
        });
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    let mut index = Vec::new();
    for t in chosen {
        let path = dir.join(t.file_name());
        std::fs::write(&path, t.render()).map_err(|e| CliError::io(&path, e))?;
        index.push(IndexEntry {
            file: t.file_name(),
            name: &t.name,
            columns: &t.columns,
            rows: t.rows.len(),
        });
        written.push(path);
    }
    let path = dir.join(format!("{}-index.json", kind.name()));
    std::fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| CliError::io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub fn available_kinds(tables: &[Table]) -> Vec<&'static str> {
    PlotKind::ALL
        .into_iter()
        .filter(|k| tables.iter().any(|t| t.kind == *k))
        .map(|k| k.name())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_history_file_has_two_columns() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(PlotKind::ZeroHistory, "run 0", &["time", "count"]);
        t.push(vec![0.0, 4.0]);
        t.push(vec![0.1, 2.0]);
        let files = emit_plot_data(&[t], "zero-history", dir.path()).unwrap();
        let body = std::fs::read_to_string(&files[0]).unwrap();
        assert!(body.contains("# columns: time count"));
        let data: Vec<&str> = body.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 2);
        assert!(data.iter().all(|l| l.split_whitespace().count() == 2));
        assert!(files[1].ends_with("zero-history-index.json"));
    }

    #[test]
    fn missing_kind_lists_available() {
        let dir = tempfile::tempdir().unwrap();
        let t = Table::new(PlotKind::Spectrum, "x", &["index"]);
        match emit_plot_data(&[t], "ladder", dir.path()) {
            Err(CliError::MissingKind { available, .. }) => assert_eq!(available, "spectrum"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(emit_plot_data(&[], "bogus", dir.path()), Err(CliError::UnknownKind { .. })));
    }
}
