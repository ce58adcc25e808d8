//! Pre-training loop state and the optimizer/EMA step.
//!
//! Data order and augmentation randomness are derived from the run seed,
//! the epoch and the position within the epoch, so the sequence of batches
//! depends only on the step counter and a resumed run replays exactly.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::dsp::MelSpec;
use crate::encoder::EncoderConfig;
use crate::error::{bail, Error, Result};
use crate::nn::NormMode;
use crate::objective::{collapse_stats, ema_update, init_teacher, loss_and_grads, HeadConfig, ObjectiveConfig, Student, Teacher};
use crate::optim::{clip_grad_norm, AdamConfig, AdamW};
use crate::rng::{self, derive_seed};
use crate::schedule::{CosineSchedule, ScheduleSet, ScheduleValues};
use crate::views::{create_views, AugmentConfig, MemoryBank, SegmentPairConfig, ViewPair};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const VIEW_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub use_predictor: bool,
    pub objective: ObjectiveConfig,
    pub pair: SegmentPairConfig,
    pub augment: AugmentConfig,
    pub peak_lr: f64,
    pub lr_end: f64,
    pub warmup_epochs: usize,
    pub wd_start: f64,
    pub wd_end: f64,
    pub m0: f64,
    /// Final EMA decay; 1 for the usual schedule, `m0` for a constant decay.
    pub m_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub grad_clip: Option<f64>,
}

impl PretrainConfig {
    pub fn small() -> Self {
        Self {
            encoder: EncoderConfig::small(),
            head: HeadConfig::default(),
            use_predictor: true,
            objective: ObjectiveConfig::default(),
            pair: SegmentPairConfig::default(),
            augment: AugmentConfig::default(),
            peak_lr: 5e-4,
            lr_end: 1e-6,
            warmup_epochs: 10,
            wd_start: 0.04,
            wd_end: 0.4,
            m0: 0.99,
            m_end: 1.0,
            epochs: 300,
            batch_size: 1536,
            seed: 0,
            adam: AdamConfig::default(),
            grad_clip: None,
        }
    }

    pub fn base() -> Self {
        Self { encoder: EncoderConfig::base(), peak_lr: 2e-4, m0: 0.9995, epochs: 200, ..Self::small() }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.head.validate()?;
        self.pair.validate()?;
        self.augment.validate()?;
        if self.batch_size < 2 {
            bail!(Config, "batch_size must be at least 2 for batch normalization, got {}", self.batch_size);
        }
        if self.epochs == 0 || self.warmup_epochs > self.epochs {
            bail!(Config, "need 0 < epochs and warmup_epochs <= epochs, got {} and {}", self.epochs, self.warmup_epochs);
        }
        for (name, v) in [("m0", self.m0), ("m_end", self.m_end)] {
            if !(0.0..=1.0).contains(&v) {
                bail!(Config, "{name} must lie in [0, 1], got {v}");
            }
        }
        if !(self.peak_lr >= 0.0 && self.lr_end >= 0.0 && self.wd_start >= 0.0 && self.wd_end >= 0.0) {
            bail!(Config, "learning rates and weight decays must be non-negative");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                bail!(Config, "grad_clip must be positive, got {c}");
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_clips: usize) -> Result<u64> {
        let s = n_clips / self.batch_size;
        if s == 0 {
            bail!(Config, "dataset of {n_clips} clips cannot fill a batch of {}", self.batch_size);
        }
        Ok(s as u64)
    }

    pub fn schedules(&self, n_clips: usize) -> Result<ScheduleSet> {
        let spe = self.steps_per_epoch(n_clips)?;
        let total = spe * self.epochs as u64;
        Ok(ScheduleSet {
            lr: CosineSchedule::new(self.peak_lr, self.lr_end, spe * self.warmup_epochs as u64, total)?,
            wd: CosineSchedule::new(self.wd_start, self.wd_end, 0, total)?,
            ema: CosineSchedule::new(self.m0, self.m_end, 0, total)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Index of the step just taken (0-based).
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
    pub wd: f64,
    pub m: f64,
    /// Mean pairwise cosine of the teacher projections in the batch.
    pub cosine_mean: f64,
    /// Mean per-dimension std of the normalized student embeddings.
    pub embed_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub cfg: PretrainConfig,
    pub student: Student,
    pub teacher: Teacher,
    pub opt: AdamW<Student>,
    pub bank: MemoryBank,
    pub step: u64,
    pub n_clips: usize,
    pub schedules: ScheduleSet,
}

impl TrainState {
    pub fn new(cfg: PretrainConfig, n_clips: usize) -> Result<Self> {
        cfg.validate()?;
        let schedules = cfg.schedules(n_clips)?;
        let mut r = rng::seeded(derive_seed(cfg.seed, &[INIT_STREAM]));
        let student = Student::new(cfg.encoder, cfg.head, cfg.use_predictor, &mut r)?;
        let teacher = init_teacher(&student);
        let opt = AdamW::new(&student, cfg.adam);
        let bank = MemoryBank::new(cfg.augment.memory_size);
        Ok(Self { cfg, student, teacher, opt, bank, step: 0, n_clips, schedules })
    }

    pub fn total_steps(&self) -> u64 {
        self.schedules.lr.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.n_clips as u64 / self.cfg.batch_size as u64
    }

    /// Epoch and `(position in epoch, clip index)` pairs of the batch for `step`.
    pub fn batch_plan(&self, step: u64) -> (u64, Vec<(u64, usize)>) {
        let spe = self.steps_per_epoch();
        let (epoch, k) = (step / spe, (step % spe) as usize);
        let mut order: Vec<usize> = (0..self.n_clips).collect();
        order.shuffle(&mut rng::seeded(derive_seed(self.cfg.seed, &[SHUFFLE_STREAM, epoch])));
        let b = self.cfg.batch_size;
        let plan = (k * b..(k + 1) * b).map(|p| (p as u64, order[p])).collect();
        (epoch, plan)
    }

    /// Builds the view pairs of the current step from normalized clip
    /// spectrograms, advancing the memory bank.
    pub fn next_views(&mut self, clips: &[MelSpec]) -> Result<Vec<ViewPair>> {
        if clips.len() != self.n_clips {
            bail!(Input, "state was planned for {} clips, got {}", self.n_clips, clips.len());
        }
        let (epoch, plan) = self.batch_plan(self.step);
        plan.into_iter()
            .map(|(pos, idx)| {
                let mut r = rng::seeded(derive_seed(self.cfg.seed, &[VIEW_STREAM, epoch, pos]));
                create_views(&clips[idx], &self.cfg.pair, &self.cfg.augment, &mut self.bank, &mut r)
            })
            .collect()
    }

    /// One full step: views, loss, optimizer update and EMA.
    pub fn step_on(&mut self, clips: &[MelSpec]) -> Result<StepReport> {
        let views = self.next_views(clips)?;
        self.train_step(&views)
    }

    pub fn train_step(&mut self, views: &[ViewPair]) -> Result<StepReport> {
        if self.is_done() {
            bail!(Input, "training already finished at step {}", self.step);
        }
        let ScheduleValues { lr, wd, m } = self.schedules.at(self.step)?;
        let x: Vec<&MelSpec> = views.iter().map(|v| &v.x).collect();
        let xp: Vec<&MelSpec> = views.iter().map(|v| &v.x_prime).collect();
        let mut out = loss_and_grads(&self.student, &self.teacher, &x, &xp, &self.cfg.objective, false)
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("step {}: {msg} (lr {lr}, wd {wd}, m {m})", self.step)),
                other => other,
            })?;
        if let Some(c) = self.cfg.grad_clip {
            clip_grad_norm(&mut out.grads, c)?;
        }
        self.opt.step(&mut self.student, &out.grads, lr, wd)?;
        self.student.update_running(&out.stats);
        ema_update(&mut self.teacher, &self.student, m, self.cfg.objective.buffer_update)?;
        let (cosine_mean, _) = collapse_stats(&out.teacher_proj)?;
        let (_, embed_std) = collapse_stats(&out.student_embed)?;
        let report = StepReport {
            step: self.step,
            epoch: self.step / self.steps_per_epoch(),
            loss: out.loss,
            lr,
            wd,
            m,
            cosine_mean,
            embed_std,
        };
        self.step += 1;
        Ok(report)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseReport {
    /// Mean pairwise cosine of the normalized teacher projections.
    pub cosine_mean: f64,
    /// Mean per-dimension std of the normalized teacher projections.
    pub proj_std: f64,
    /// Mean per-dimension std of the normalized encoder embeddings.
    pub embed_std: f64,
}

/// Collapse indicators of the teacher over a probe batch of equal-length
/// segments.
pub fn collapse_diagnostics(teacher: &Teacher, probe: &[&MelSpec], mode: NormMode) -> Result<CollapseReport> {
    let (out, _) = teacher.encoder.forward(probe, false)?;
    let h = out.cls();
    let (z, _, _) = teacher.projector.forward(&h, mode)?;
    let (cosine_mean, proj_std) = collapse_stats(&z)?;
    let (_, embed_std) = collapse_stats(&h)?;
    Ok(CollapseReport { cosine_mean, proj_std, embed_std })
}
