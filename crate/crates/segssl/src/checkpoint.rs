//! Training checkpoints.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "SEGSSLCK"
//! version   u32
//! mlen      u64      length of the JSON manifest
//! manifest  mlen bytes
//! payload   every tensor listed in the manifest, in order, as f64 LE,
//!           row-major
//! digest    32 bytes SHA-256 of everything above
//! ```
//!
//! The manifest records the full run configuration, its hash, the step,
//! the Adam step count and the name, role and shape of each tensor. Data
//! order and augmentation draws are derived from `(seed, step)`, so no
//! generator state needs saving beyond the seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segssl_core::module::{Module, Named};
use segssl_core::train::TrainState;
use segssl_core::Tensor;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SEGSSLCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub step: u64,
    pub n_clips: usize,
    pub seed: u64,
    pub adam_steps: u64,
    /// How the random streams are reproduced on resume.
    pub rng: String,
    pub tensors: Vec<TensorEntry>,
}

const GROUPS: [&str; 4] = ["student", "teacher", "adam_m", "adam_v"];

fn named<'a>(v: Vec<Named<&'a Tensor>>, group: &str) -> Vec<(String, &'a Tensor)> {
    v.into_iter().map(|t| (format!("{group}.{}", t.name), t.tensor)).collect()
}

fn named_mut<'a>(v: Vec<Named<&'a mut Tensor>>, group: &str) -> Vec<(String, &'a mut Tensor)> {
    v.into_iter().map(|t| (format!("{group}.{}", t.name), t.tensor)).collect()
}

fn groups(state: &TrainState) -> [Vec<(String, &Tensor)>; 4] {
    [
        named(state.student.tensors(), GROUPS[0]),
        named(state.teacher.tensors(), GROUPS[1]),
        named(state.opt.m.tensors(), GROUPS[2]),
        named(state.opt.v.tensors(), GROUPS[3]),
    ]
}

pub fn encode(state: &TrainState, config: &RunConfig) -> Vec<u8> {
    let mut tensors: Vec<(String, &Tensor)> = groups(state).into_iter().flatten().collect();
    tensors.extend(state.bank.iter().enumerate().map(|(i, t)| (format!("bank.{i}"), t)));
    let manifest = CheckpointManifest {
        format_version: VERSION,
        config_hash: config.hash(),
        config: config.clone(),
        step: state.step,
        n_clips: state.n_clips,
        seed: state.cfg.seed,
        adam_steps: state.opt.t,
        rng: "derived from (seed, epoch, position)".into(),
        tensors: tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), dtype: "f64le".into(), rows: t.rows(), cols: t.cols() }).collect(),
    };
    let mjson = serde_json::to_vec(&manifest).expect("manifest is serializable");
    let mut out = Vec::with_capacity(mjson.len() + 64 + 8 * tensors.iter().map(|(_, t)| t.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mjson.len() as u64).to_le_bytes());
    out.extend_from_slice(&mjson);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Writes atomically through a temporary file in the same directory.
pub fn save(path: &Path, state: &TrainState, config: &RunConfig) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(state, config)).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

/// Parsed checkpoint: manifest plus tensors by name.
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: &str| Error::format(path, format!("invalid checkpoint: {msg}"));
    if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic header"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("digest mismatch (file is corrupted or truncated)"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("format version {version}, expected {VERSION}")));
    }
    let mlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let mend = 20usize.checked_add(mlen).filter(|&e| e <= body.len()).ok_or_else(|| bad("manifest length out of range"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&body[20..mend]).map_err(|e| bad(&e.to_string()))?;
    let mut pos = mend;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n = e.rows * e.cols;
        let end = pos + 8 * n;
        if end > body.len() {
            return Err(bad("payload shorter than the manifest says"));
        }
        let data = body[pos..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.push((e.name.clone(), Tensor::from_vec(e.rows, e.cols, data)));
        pos = end;
    }
    if pos != body.len() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(Checkpoint { manifest, tensors })
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(path, &bytes)
}

impl Checkpoint {
    /// Rebuilds the training state. `expect_hash`, when given, must match
    /// the stored config hash.
    pub fn restore(&self, expect_hash: Option<&str>) -> Result<TrainState> {
        let m = &self.manifest;
        if let Some(h) = expect_hash {
            if h != m.config_hash {
                return Err(Error::Config(format!("checkpoint was written with config {} but this run uses {h}", m.config_hash)));
            }
        }
        if m.config.hash() != m.config_hash {
            return Err(Error::Config("checkpoint config does not match its recorded hash".into()));
        }
        let mut state = TrainState::new(m.config.pretrain()?, m.n_clips)?;
        let mut stored = self.tensors.iter();
        {
            let mut targets: Vec<(String, &mut Tensor)> = Vec::new();
            targets.extend(named_mut(state.student.tensors_mut(), GROUPS[0]));
            targets.extend(named_mut(state.teacher.tensors_mut(), GROUPS[1]));
            targets.extend(named_mut(state.opt.m.tensors_mut(), GROUPS[2]));
            targets.extend(named_mut(state.opt.v.tensors_mut(), GROUPS[3]));
            for (name, dst) in targets {
                let (sname, src) = stored.next().ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
                if *sname != name || src.shape() != dst.shape() {
                    return Err(Error::Config(format!("checkpoint tensor {sname} {:?} does not fit {name} {:?}", src.shape(), dst.shape())));
                }
                dst.data_mut().copy_from_slice(src.data());
            }
        }
        for (name, t) in stored {
            if !name.starts_with("bank.") {
                return Err(Error::Config(format!("unexpected checkpoint tensor {name}")));
            }
            state.bank.push(t.clone());
        }
        state.step = m.step;
        state.opt.t = m.adam_steps;
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use segssl_core::module::checksum;

    fn tiny() -> RunConfig {
        RunConfig::load(
            None,
            &[
                "encoder.n_blocks=1".into(),
                "encoder.dim=8".into(),
                "encoder.n_heads=2".into(),
                "encoder.inner_dim=16".into(),
                "heads.hidden_dim=16".into(),
                "heads.out_dim=4".into(),
                "data.batch_size=2".into(),
                "schedules.epochs=2".into(),
                "schedules.warmup_epochs=1".into(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = tiny();
        let mut s = TrainState::new(cfg.pretrain().unwrap(), 4).unwrap();
        s.step = 3;
        s.opt.t = 3;
        s.opt.m.encoder.cls.fill(0.25);
        s.bank.push(Tensor::filled(5, 64, 0.5));
        let bytes = encode(&s, &cfg);
        let back = decode(Path::new("x"), &bytes).unwrap().restore(Some(&cfg.hash())).unwrap();
        assert_eq!(back, s);
        assert_eq!(checksum(&back.teacher), checksum(&s.teacher));
    }

    #[test]
    fn corruption_and_hash_mismatch_are_refused() {
        let cfg = tiny();
        let s = TrainState::new(cfg.pretrain().unwrap(), 4).unwrap();
        let mut bytes = encode(&s, &cfg);
        let p = Path::new("x");
        assert!(decode(p, &bytes[..bytes.len() - 1]).is_err());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode(p, &bytes), Err(Error::Format { .. })));
        let ok = encode(&s, &cfg);
        let ck = decode(p, &ok).unwrap();
        assert!(matches!(ck.restore(Some("deadbeef")), Err(Error::Config(_))));
        assert!(decode(p, b"NOTACKPT").is_err());
    }
}
