//! On-disk result bundles.
//!
//! A bundle directory holds:
//!
//! | file           | content                                          |
//! |----------------|--------------------------------------------------|
//! | `config.cfg`   | resolved configuration, defaults included        |
//! | `*.csv`        | result tables, one header row                    |
//! | `summary.json` | headline numbers keyed by criterion and cell     |
//! | `failures.log` | one tab-separated line per excluded replication  |
//!
//! Nothing in a bundle depends on wall-clock time or scheduling, so equal
//! configs give byte-identical bundles.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{HarnessError, Result};

/// Version of the CSV and JSON layouts; bumped on any column change.
pub const SCHEMA_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.cfg";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FAILURE_FILE: &str = "failures.log";

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file_name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file_name: &str, header: &[&str]) -> Self {
        Self {
            file_name: file_name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// RFC 4180 CSV; fields with commas, quotes or newlines are quoted.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub resolved_config: String,
    pub tables: Vec<Table>,
    pub summary: Value,
    pub failures: Vec<String>,
}

impl ResultBundle {
    pub fn table(&self, file_name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file_name == file_name)
    }

    /// `(file name, content)` for every file of the bundle.
    pub fn files(&self) -> Vec<(String, Vec<u8>)> {
        let mut files = vec![(CONFIG_FILE.to_string(), self.resolved_config.clone().into_bytes())];
        for t in &self.tables {
            files.push((t.file_name.clone(), t.to_csv()));
        }
        let mut summary = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        summary.push('\n');
        files.push((SUMMARY_FILE.to_string(), summary.into_bytes()));
        let mut log = self.failures.join("\n");
        if !log.is_empty() {
            log.push('\n');
        }
        files.push((FAILURE_FILE.to_string(), log.into_bytes()));
        files
    }

    /// Writes the bundle into `dir`, replacing any previous bundle there.
    ///
    /// Files are staged in a sibling directory that is renamed into place,
    /// so readers never see a half-written bundle.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let staging = sibling(dir, "tmp")?;
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(HarnessError::io(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(HarnessError::io(&staging))?;
        for (name, bytes) in self.files() {
            let path = staging.join(name);
            fs::write(&path, bytes).map_err(HarnessError::io(&path))?;
        }
        if dir.exists() {
            let old = sibling(dir, "old")?;
            if old.exists() {
                fs::remove_dir_all(&old).map_err(HarnessError::io(&old))?;
            }
            fs::rename(dir, &old).map_err(HarnessError::io(dir))?;
            fs::rename(&staging, dir).map_err(HarnessError::io(dir))?;
            fs::remove_dir_all(&old).map_err(HarnessError::io(&old))?;
        } else {
            fs::rename(&staging, dir).map_err(HarnessError::io(dir))?;
        }
        Ok(())
    }
}

fn sibling(dir: &Path, tag: &str) -> Result<PathBuf> {
    let name = dir.file_name().ok_or_else(|| HarnessError::Bundle {
        path: dir.to_path_buf(),
        message: "bundle path has no final component".into(),
    })?;
    let parent = dir.parent().unwrap_or(Path::new(""));
    if !parent.as_os_str().is_empty() {
        fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
    }
    Ok(parent.join(format!(".{}.{tag}-{}", name.to_string_lossy(), std::process::id())))
}

/// Writes one file through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(HarnessError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(HarnessError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_commas_are_quoted() {
        let mut t = Table::new("x.csv", &["partition", "value"]);
        t.push(vec!["{1,2}{3}".into(), "0.5".into()]);
        assert_eq!(String::from_utf8(t.to_csv()).unwrap(), "partition,value\n\"{1,2}{3}\",0.5\n");
    }

    #[test]
    fn rewrite_replaces_previous_bundle() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("out");
        let mut bundle = ResultBundle {
            resolved_config: "experiment = iv_study\n".into(),
            tables: vec![Table::new("a.csv", &["x"])],
            summary: serde_json::json!({"k": 1}),
            failures: vec![],
        };
        bundle.write(&dir).unwrap();
        assert!(dir.join("a.csv").exists());
        bundle.tables = vec![Table::new("b.csv", &["y"])];
        bundle.write(&dir).unwrap();
        assert!(!dir.join("a.csv").exists());
        assert_eq!(fs::read_to_string(dir.join("b.csv")).unwrap(), "y\n");
        let leftovers = fs::read_dir(root.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
