//! JSON run configuration.
//!
//! Every section and field is optional and defaults to the Small preset;
//! unknown keys are rejected. `--set section.field=value` overrides are
//! merged into the JSON document before it is parsed, so they go through
//! the same schema checks. The SHA-256 of the canonical serialization is
//! recorded in every output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use segssl_core::dsp::{MelParams, WindowKind};
use segssl_core::encoder::{BlockPooling, EncoderConfig};
use segssl_core::eval::{ChunkPolicy, FinetuneConfig, ProbeConfig, DEFAULT_LR_GRID};
use segssl_core::nn::NormMode;
use segssl_core::objective::{BufferUpdate, HeadConfig, ObjectiveConfig};
use segssl_core::optim::AdamConfig;
use segssl_core::train::PretrainConfig;
use segssl_core::views::{AugmentConfig, SegmentPairConfig};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelSection {
    pub sample_rate: u32,
    pub window_s: f64,
    pub hop_s: f64,
    pub n_bins: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub window: String,
}

impl Default for MelSection {
    fn default() -> Self {
        let p = MelParams::default();
        Self { sample_rate: 16_000, window_s: p.window_s, hop_s: p.hop_s, n_bins: p.n_bins, f_min: p.f_min, f_max: p.f_max, window: "hamming".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewsSection {
    pub segment_len_s: f64,
    pub use_two_segments: bool,
    pub clip_len_s: f64,
    pub require_overlap: bool,
    pub mixup_alpha: f64,
    pub memory_size: usize,
    pub rrc_freq_scale: (f64, f64),
    pub rrc_time_scale: (f64, f64),
    pub mixup_first: bool,
}

impl Default for ViewsSection {
    fn default() -> Self {
        let (p, a) = (SegmentPairConfig::default(), AugmentConfig::default());
        Self {
            segment_len_s: p.segment_len_s,
            use_two_segments: p.use_two_segments,
            clip_len_s: p.clip_len_s,
            require_overlap: p.require_overlap,
            mixup_alpha: a.mixup_alpha,
            memory_size: a.memory_size,
            rrc_freq_scale: a.rrc_freq_scale,
            rrc_time_scale: a.rrc_time_scale,
            mixup_first: a.mixup_first,
        }
    }
}

/// A named preset whose fields can be individually overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub preset: String,
    pub n_blocks: Option<usize>,
    pub n_heads: Option<usize>,
    pub dim: Option<usize>,
    pub inner_dim: Option<usize>,
    pub stack_frames: Option<usize>,
    pub max_tokens: Option<usize>,
    pub final_norm: Option<bool>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self { preset: "small".into(), n_blocks: None, n_heads: None, dim: None, inner_dim: None, stack_frames: None, max_tokens: None, final_norm: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadsSection {
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub use_predictor: bool,
    /// Batch-norm mode of the teacher projector: "eval" or "train".
    pub teacher_bn: String,
    /// Teacher batch-norm buffers: "ema" or "copy".
    pub buffer_update: String,
}

impl Default for HeadsSection {
    fn default() -> Self {
        let h = HeadConfig::default();
        Self { hidden_dim: h.hidden_dim, out_dim: h.out_dim, use_predictor: true, teacher_bn: "eval".into(), buffer_update: "ema".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulesSection {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub peak_lr: f64,
    pub lr_end: f64,
    pub wd_start: f64,
    pub wd_end: f64,
    pub m0: f64,
    pub m_end: f64,
}

impl Default for SchedulesSection {
    fn default() -> Self {
        let c = PretrainConfig::small();
        Self {
            epochs: c.epochs,
            warmup_epochs: c.warmup_epochs,
            peak_lr: c.peak_lr,
            lr_end: c.lr_end,
            wd_start: c.wd_start,
            wd_end: c.wd_end,
            m0: c.m0,
            m_end: c.m_end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self { beta1: a.beta1, beta2: a.beta2, eps: a.eps, grad_clip: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub batch_size: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { batch_size: PretrainConfig::small().batch_size, seed: 0, checkpoint_every: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// "linear" or "finetune".
    pub protocol: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_grid: Vec<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_end: f64,
    /// Linear-probe block pooling: "per_block" or "joint".
    pub block_pooling: String,
    pub folds: usize,
    pub max_crop_s: f64,
    pub chunk_s: f64,
    pub warmup_epochs: usize,
    pub mixup_alpha: f64,
    pub rrc: bool,
    pub segment_s: f64,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        let c = ChunkPolicy::default();
        Self {
            protocol: "linear".into(),
            epochs: p.epochs,
            batch_size: p.batch_size,
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            momentum: p.momentum,
            weight_decay: p.weight_decay,
            lr_end: p.lr_end,
            block_pooling: "per_block".into(),
            folds: 1,
            max_crop_s: c.max_crop_s,
            chunk_s: c.chunk_s,
            warmup_epochs: 5,
            mixup_alpha: 0.0,
            rrc: false,
            segment_s: 6.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mel: MelSection,
    pub views: ViewsSection,
    pub encoder: EncoderSection,
    pub heads: HeadsSection,
    pub schedules: SchedulesSection,
    pub optimizer: OptimizerSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Linear,
    Finetune,
}

impl RunConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file (or starts from defaults when `path` is `None`)
    /// and applies `section.field=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut v = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    /// Hex SHA-256 of the compact serialization.
    pub fn hash(&self) -> String {
        hex_digest(serde_json::to_vec(self).expect("config is serializable").as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        self.mel_params()?.validate(self.mel.sample_rate)?;
        self.pretrain()?.validate()?;
        self.protocol()?;
        self.block_pooling()?;
        self.probe().validate()?;
        if self.eval.folds == 0 {
            return Err(Error::Config("eval.folds must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mel_params(&self) -> Result<MelParams> {
        let window_kind = match self.mel.window.as_str() {
            "hamming" => WindowKind::Hamming,
            "hann" => WindowKind::Hann,
            other => return Err(Error::Config(format!("mel.window must be \"hamming\" or \"hann\", got {other:?}"))),
        };
        let m = &self.mel;
        Ok(MelParams { window_s: m.window_s, hop_s: m.hop_s, n_bins: m.n_bins, f_min: m.f_min, f_max: m.f_max, window_kind })
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let e = &self.encoder;
        let base = match e.preset.as_str() {
            "small" => EncoderConfig::small(),
            "base" => EncoderConfig::base(),
            other => return Err(Error::Config(format!("encoder.preset must be \"small\" or \"base\", got {other:?}"))),
        };
        Ok(EncoderConfig {
            n_blocks: e.n_blocks.unwrap_or(base.n_blocks),
            n_heads: e.n_heads.unwrap_or(base.n_heads),
            dim: e.dim.unwrap_or(base.dim),
            inner_dim: e.inner_dim.unwrap_or(base.inner_dim),
            stack_frames: e.stack_frames.unwrap_or(base.stack_frames),
            input_bins: self.mel.n_bins,
            max_tokens: e.max_tokens.unwrap_or(base.max_tokens),
            final_norm: e.final_norm.unwrap_or(base.final_norm),
        })
    }

    pub fn pretrain(&self) -> Result<PretrainConfig> {
        let (v, h, s, o, d) = (&self.views, &self.heads, &self.schedules, &self.optimizer, &self.data);
        let teacher_mode = match h.teacher_bn.as_str() {
            "eval" => NormMode::Eval,
            "train" => NormMode::Train,
            other => return Err(Error::Config(format!("heads.teacher_bn must be \"eval\" or \"train\", got {other:?}"))),
        };
        let buffer_update = match h.buffer_update.as_str() {
            "ema" => BufferUpdate::Ema,
            "copy" => BufferUpdate::CopyStudent,
            other => return Err(Error::Config(format!("heads.buffer_update must be \"ema\" or \"copy\", got {other:?}"))),
        };
        Ok(PretrainConfig {
            encoder: self.encoder_config()?,
            head: HeadConfig { hidden_dim: h.hidden_dim, out_dim: h.out_dim },
            use_predictor: h.use_predictor,
            objective: ObjectiveConfig { teacher_mode, buffer_update },
            pair: SegmentPairConfig {
                segment_len_s: v.segment_len_s,
                use_two_segments: v.use_two_segments,
                clip_len_s: v.clip_len_s,
                require_overlap: v.require_overlap,
            },
            augment: AugmentConfig {
                mixup_alpha: v.mixup_alpha,
                memory_size: v.memory_size,
                rrc_freq_scale: v.rrc_freq_scale,
                rrc_time_scale: v.rrc_time_scale,
                mixup_first: v.mixup_first,
            },
            peak_lr: s.peak_lr,
            lr_end: s.lr_end,
            warmup_epochs: s.warmup_epochs,
            wd_start: s.wd_start,
            wd_end: s.wd_end,
            m0: s.m0,
            m_end: s.m_end,
            epochs: s.epochs,
            batch_size: d.batch_size,
            seed: d.seed,
            adam: AdamConfig { beta1: o.beta1, beta2: o.beta2, eps: o.eps },
            grad_clip: o.grad_clip,
        })
    }

    pub fn protocol(&self) -> Result<Protocol> {
        match self.eval.protocol.as_str() {
            "linear" => Ok(Protocol::Linear),
            "finetune" => Ok(Protocol::Finetune),
            other => Err(Error::Config(format!("eval.protocol must be \"linear\" or \"finetune\", got {other:?}"))),
        }
    }

    pub fn block_pooling(&self) -> Result<BlockPooling> {
        match self.eval.block_pooling.as_str() {
            "per_block" => Ok(BlockPooling::PerBlock),
            "joint" => Ok(BlockPooling::Joint),
            other => Err(Error::Config(format!("eval.block_pooling must be \"per_block\" or \"joint\", got {other:?}"))),
        }
    }

    pub fn chunk_policy(&self) -> ChunkPolicy {
        ChunkPolicy { max_crop_s: self.eval.max_crop_s, chunk_s: self.eval.chunk_s }
    }

    pub fn probe(&self) -> ProbeConfig {
        let e = &self.eval;
        ProbeConfig {
            epochs: e.epochs,
            batch_size: e.batch_size,
            lr_grid: e.lr_grid.clone(),
            momentum: e.momentum,
            weight_decay: e.weight_decay,
            lr_end: e.lr_end,
            seed: e.seed,
        }
    }

    /// Finetune settings for one grid learning rate.
    pub fn finetune(&self, lr: f64) -> FinetuneConfig {
        let e = &self.eval;
        let v = &self.views;
        FinetuneConfig {
            epochs: e.epochs,
            batch_size: e.batch_size,
            lr,
            warmup_epochs: e.warmup_epochs,
            lr_end: e.lr_end,
            momentum: e.momentum,
            weight_decay: e.weight_decay,
            mixup_alpha: e.mixup_alpha,
            rrc: e.rrc.then(|| AugmentConfig { mixup_alpha: 0.0, rrc_freq_scale: v.rrc_freq_scale, rrc_time_scale: v.rrc_time_scale, ..AugmentConfig::default() }),
            segment_frames: (e.segment_s / self.mel.hop_s).round() as usize,
            seed: e.seed,
        }
    }
}

/// Sets `section.field` (dotted path) to the JSON value `value`; bare words
/// that are not valid JSON are taken as strings.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override key in {assignment:?}")))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_small_preset() {
        let c = RunConfig::default();
        assert_eq!(c.pretrain().unwrap(), PretrainConfig::small());
        assert_eq!(c.mel_params().unwrap(), MelParams::default());
        assert_eq!(c.probe(), ProbeConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_value(serde_json::json!({"views": {"segment_len": 6}})).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
        assert!(RunConfig::from_value(serde_json::json!({"extra": {}})).is_err());
        assert!(RunConfig::from_value(serde_json::json!({"eval": {"protocol": "knn"}})).is_err());
    }

    #[test]
    fn overrides_and_hash() {
        let a = RunConfig::load(None, &["data.seed=5".into(), "encoder.preset=base".into()]).unwrap();
        assert_eq!(a.data.seed, 5);
        assert_eq!(a.encoder_config().unwrap(), EncoderConfig::base());
        let b = RunConfig::load(None, &[]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(b.hash(), RunConfig::default().hash());
        assert_eq!(b.hash().len(), 64);
        assert!(RunConfig::load(None, &["data.sed=5".into()]).is_err());
        let round: RunConfig = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(round, a);
    }
}
