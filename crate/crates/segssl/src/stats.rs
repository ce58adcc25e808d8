//! Global normalization statistics on disk.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use segssl_core::dsp::{GlobalStats, MelParams};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsFile {
    pub min_val: f64,
    pub max_val: f64,
    pub n_frames_seen: u64,
    /// Digest of the mel front end that produced the statistics.
    pub mel_digest: String,
    pub config_hash: String,
    pub n_clips: usize,
}

impl StatsFile {
    pub fn new(stats: &GlobalStats, params: &MelParams, config_hash: &str, n_clips: usize) -> Self {
        Self {
            min_val: stats.min_val,
            max_val: stats.max_val,
            n_frames_seen: stats.n_frames_seen,
            mel_digest: format!("{:016x}", params.digest()),
            config_hash: config_hash.to_string(),
            n_clips,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats are serializable");
        fs::write(path, text + "\n").map_err(Error::io(path))
    }

    /// The statistics, checked against the front end about to use them.
    pub fn stats_for(&self, params: &MelParams) -> Result<GlobalStats> {
        let want = format!("{:016x}", params.digest());
        if self.mel_digest != want {
            return Err(Error::Config(format!("statistics were computed with mel front end {} but the config uses {want}", self.mel_digest)));
        }
        Ok(GlobalStats::new(self.min_val, self.max_val, self.n_frames_seen)?)
    }
}
