//! JSON-lines dataset manifests.
//!
//! One record per line: `{"path", "label" | "labels", "fold"?, "split"?}`.
//! An optional first line `{"header": {...}}` carries free-form metadata.
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use segssl_core::eval::Labels;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitName>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: Option<Value>,
    pub records: Vec<ClipRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(header: Option<Value>, records: Vec<ClipRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self { header, records, base_dir: base_dir.into() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| Error::format(path, format!("line {}: {e}", i + 1));
            let value: Value = serde_json::from_str(line).map_err(bad)?;
            if i == 0 {
                if let Some(h) = value.get("header") {
                    header = Some(h.clone());
                    continue;
                }
            }
            let rec: ClipRecord = serde_json::from_value(value).map_err(bad)?;
            if rec.label.is_some() == rec.labels.is_some() && (rec.label.is_some() || rec.labels.is_some()) {
                return Err(Error::format(path, format!("line {}: give either label or labels, not both", i + 1)));
            }
            records.push(rec);
        }
        if records.is_empty() {
            return Err(Error::format(path, "manifest has no records"));
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { header, records, base_dir })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        if let Some(h) = &self.header {
            serde_json::to_writer(&mut out, &serde_json::json!({ "header": h })).expect("serializable header");
            out.push(b'\n');
        }
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("serializable record");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(Error::io(path))?;
        f.write_all(&out).map_err(Error::io(path))
    }

    pub fn resolve(&self, rec: &ClipRecord) -> PathBuf {
        let p = Path::new(&rec.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Labels of all records; every record must be labeled the same way.
    pub fn labels(&self) -> Result<Labels> {
        let fail = |i: usize| Error::Config(format!("record {i} ({}) lacks a label of the manifest's kind", self.records[i].path));
        if self.records[0].labels.is_some() {
            let v = self.records.iter().enumerate().map(|(i, r)| r.labels.clone().ok_or_else(|| fail(i))).collect::<Result<_>>()?;
            Ok(Labels::Multi(v))
        } else {
            let v = self.records.iter().enumerate().map(|(i, r)| r.label.ok_or_else(|| fail(i))).collect::<Result<_>>()?;
            Ok(Labels::Single(v))
        }
    }

    /// Class count from the header's `n_classes`, else one past the largest label.
    pub fn n_classes(&self) -> Result<usize> {
        if let Some(n) = self.header.as_ref().and_then(|h| h.get("n_classes")).and_then(Value::as_u64) {
            return Ok(n as usize);
        }
        let max = match self.labels()? {
            Labels::Single(v) => v.into_iter().max(),
            Labels::Multi(v) => v.into_iter().flatten().max(),
        };
        Ok(max.map_or(0, |m| m + 1))
    }

    pub fn indices_where(&self, pred: impl Fn(&ClipRecord) -> bool) -> Vec<usize> {
        self.records.iter().enumerate().filter(|(_, r)| pred(r)).map(|(i, _)| i).collect()
    }
}
