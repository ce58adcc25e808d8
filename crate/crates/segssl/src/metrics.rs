//! Append-only JSON-lines training log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segssl_core::train::StepReport;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub wd: f64,
    pub m: f64,
    pub cosine_mean: f64,
    pub embed_std: f64,
}

impl From<&StepReport> for MetricsRecord {
    fn from(r: &StepReport) -> Self {
        Self { step: r.step, loss: r.loss, lr: r.lr, wd: r.wd, m: r.m, cosine_mean: r.cosine_mean, embed_std: r.embed_std }
    }
}

pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    /// Opens the log for a run starting at `from_step`: records of later
    /// steps left by an interrupted run are dropped, and a fresh log starts
    /// with a header line carrying the config hash.
    pub fn open(path: &Path, config_hash: &str, from_step: u64) -> Result<Self> {
        let mut kept = String::new();
        if from_step > 0 && path.exists() {
            let text = fs::read_to_string(path).map_err(Error::io(path))?;
            for line in text.lines() {
                let keep = match serde_json::from_str::<MetricsRecord>(line) {
                    Ok(r) => r.step < from_step,
                    Err(_) => true,
                };
                if keep {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        } else {
            kept = serde_json::json!({ "header": { "config_hash": config_hash } }).to_string() + "\n";
        }
        fs::write(path, kept).map_err(Error::io(path))?;
        let f = OpenOptions::new().append(true).open(path).map_err(Error::io(path))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    pub fn append(&mut self, r: &StepReport) -> Result<()> {
        let line = serde_json::to_string(&MetricsRecord::from(r)).expect("record is serializable");
        writeln!(self.out, "{line}").map_err(Error::io(&self.path))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(Error::io(&self.path))
    }
}

/// Step records of a log, header skipped.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
}
