//! Downstream evaluation: chunked embedding extraction, linear probe,
//! finetuning, metrics and k-fold cross-validation.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;

use crate::dsp::{normalize, GlobalStats, MelExtractor, MelSpec, WaveClip};
use crate::encoder::{extract_embedding, EmbeddingMode, Encoder, SegmentEmbedding};
use crate::error::{bail, Result};
use crate::module::{join, Module, Named};
use crate::nn::Linear;
use crate::optim::Sgd;
use crate::rng::{self, derive_seed, Rng};
use crate::schedule::CosineSchedule;
use crate::tensor::Tensor;
use crate::views::{mix_log_domain, rrc_augment, AugmentConfig};

/// Long clips are center-cropped to `max_crop_s` and split into
/// non-overlapping `chunk_s` chunks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChunkPolicy {
    pub max_crop_s: f64,
    pub chunk_s: f64,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self { max_crop_s: 12.0, chunk_s: 6.0 }
    }
}

/// Sample ranges of the chunks of an `n_samples` clip. Clips up to one
/// chunk long are a single chunk; longer clips are center-cropped to the
/// maximum length and split, keeping a shorter final chunk if it has at
/// least `min_chunk_samples` samples.
pub fn plan_chunks(n_samples: usize, sample_rate: u32, policy: &ChunkPolicy, min_chunk_samples: usize) -> Result<Vec<Range<usize>>> {
    if !(policy.chunk_s > 0.0 && policy.max_crop_s >= policy.chunk_s) {
        bail!(Config, "need 0 < chunk_s <= max_crop_s, got {} and {}", policy.chunk_s, policy.max_crop_s);
    }
    if n_samples < min_chunk_samples.max(1) {
        bail!(Input, "clip of {n_samples} samples is shorter than the {min_chunk_samples}-sample minimum");
    }
    let sr = sample_rate as f64;
    let chunk = libm::round(policy.chunk_s * sr) as usize;
    let max_len = libm::round(policy.max_crop_s * sr) as usize;
    if n_samples <= chunk {
        return Ok(vec![0..n_samples]);
    }
    let (start, len) = if n_samples > max_len { ((n_samples - max_len) / 2, max_len) } else { (0, n_samples) };
    let mut out = Vec::new();
    let mut s = start;
    while s < start + len {
        let e = (s + chunk).min(start + len);
        if e - s == chunk || e - s >= min_chunk_samples {
            out.push(s..e);
        }
        s = e;
    }
    Ok(out)
}

/// Samples needed to produce `frames` frames with the extractor.
pub fn min_samples_for_frames(extractor: &MelExtractor, frames: usize) -> usize {
    let p = extractor.params();
    let sr = extractor.sample_rate();
    p.window_samples(sr) + frames.saturating_sub(1) * p.hop_samples(sr)
}

/// Embeds one normalized spectrogram.
pub fn embed_spec(spec: &MelSpec, encoder: &Encoder, mode: EmbeddingMode) -> Result<SegmentEmbedding> {
    let seq = encoder.encode(spec, mode.needs_per_block())?;
    extract_embedding(&seq, mode)
}

/// Chunks a waveform, embeds each normalized chunk independently and
/// averages the embeddings.
pub fn chunk_and_embed(
    clip: &WaveClip,
    extractor: &MelExtractor,
    stats: &GlobalStats,
    encoder: &Encoder,
    mode: EmbeddingMode,
    policy: &ChunkPolicy,
) -> Result<SegmentEmbedding> {
    let min = min_samples_for_frames(extractor, encoder.cfg.stack_frames);
    let chunks = plan_chunks(clip.len(), clip.sample_rate, policy, min)?;
    let mut acc: Option<Vec<f64>> = None;
    for range in &chunks {
        let piece = WaveClip { samples: clip.samples[range.clone()].to_vec(), sample_rate: clip.sample_rate };
        let spec = normalize(&extractor.compute(&piece)?, stats)?;
        let e = embed_spec(&spec, encoder, mode)?;
        match acc.as_mut() {
            None => acc = Some(e.vector),
            Some(a) => a.iter_mut().zip(&e.vector).for_each(|(x, y)| *x += y),
        }
    }
    let mut vector = acc.expect("at least one chunk");
    vector.iter_mut().for_each(|v| *v /= chunks.len() as f64);
    Ok(SegmentEmbedding { vector, mode })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Single(Vec<usize>),
    Multi(Vec<Vec<usize>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Single(v) => Labels::Single(idx.iter().map(|&i| v[i]).collect()),
            Labels::Multi(v) => Labels::Multi(idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }

    /// One-hot or multi-hot targets, `n x n_classes`.
    pub fn targets(&self, n_classes: usize) -> Result<Tensor> {
        let mut t = Tensor::zeros(self.len(), n_classes);
        let mut set = |r: usize, c: usize| {
            if c >= n_classes {
                bail!(Input, "label {c} out of range for {n_classes} classes");
            }
            t.set(r, c, 1.0);
            Ok(())
        };
        match self {
            Labels::Single(v) => v.iter().enumerate().try_for_each(|(r, &c)| set(r, c))?,
            Labels::Multi(v) => v.iter().enumerate().try_for_each(|(r, cs)| cs.iter().try_for_each(|&c| set(r, c)))?,
        }
        Ok(t)
    }

    /// Accuracy for single-label sets, mAP for multi-label sets.
    pub fn score(&self, scores: &Tensor) -> Result<f64> {
        match self {
            Labels::Single(v) => accuracy(scores, v),
            Labels::Multi(_) => mean_average_precision(scores, &self.targets(scores.cols())?),
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self {
            Labels::Single(_) => "accuracy",
            Labels::Multi(_) => "mAP",
        }
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        bail!(Input, "accuracy of an empty set");
    }
    if scores.rows() != labels.len() {
        bail!(Shape, "{} score rows for {} labels", scores.rows(), labels.len());
    }
    let hits = labels.iter().enumerate().filter(|(r, &l)| argmax(scores.row(*r)) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Average precision of one class: the mean, over positives, of the
/// precision among all items scoring at least as high. `None` without
/// positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut tp, mut sum) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_pos = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            group_pos += positive[order[j]] as usize;
            j += 1;
        }
        seen += j - i;
        tp += group_pos;
        sum += group_pos as f64 * tp as f64 / seen as f64;
        i = j;
    }
    Some(sum / n_pos as f64)
}

/// Macro average of per-class AP over classes with at least one positive.
pub fn mean_average_precision(scores: &Tensor, targets: &Tensor) -> Result<f64> {
    if scores.shape() != targets.shape() {
        bail!(Shape, "scores {:?} vs targets {:?}", scores.shape(), targets.shape());
    }
    let (n, c) = scores.shape();
    let mut total = 0.0;
    let mut counted = 0;
    for k in 0..c {
        let s: Vec<f64> = (0..n).map(|r| scores.get(r, k)).collect();
        let p: Vec<bool> = (0..n).map(|r| targets.get(r, k) > 0.5).collect();
        if let Some(ap) = average_precision(&s, &p) {
            total += ap;
            counted += 1;
        }
    }
    if counted == 0 {
        bail!(Input, "no class has a positive example");
    }
    Ok(total / counted as f64)
}

/// Per-feature standardization fitted on training embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor) -> Result<Self> {
        if x.rows() == 0 {
            bail!(Input, "cannot standardize an empty set");
        }
        let mean = x.col_means();
        let mut var = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (j, v) in x.row(r).iter().enumerate() {
                var[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
        let std = var.iter().map(|v| libm::sqrt(v / x.rows() as f64)).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

pub const DEFAULT_LR_GRID: [f64; 6] = [3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_grid: Vec<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_end: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 1024, lr_grid: DEFAULT_LR_GRID.to_vec(), momentum: 0.9, weight_decay: 0.0, lr_end: 1e-6, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            bail!(Config, "probe epochs and batch size must be positive");
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|&l| !(l > 0.0)) {
            bail!(Config, "learning-rate grid must be non-empty and positive");
        }
        Ok(())
    }
}

/// Softmax cross-entropy (single-label) or sigmoid binary cross-entropy
/// (multi-label) against soft targets; returns the batch-mean loss and
/// writes its gradient with respect to the logits.
fn classification_loss(logits: &Tensor, targets: &Tensor, multi: bool, grad: &mut Tensor) -> f64 {
    let n = logits.rows() as f64;
    let mut loss = 0.0;
    for r in 0..logits.rows() {
        let (z, t) = (logits.row(r), targets.row(r));
        let g = grad.row_mut(r);
        if multi {
            for k in 0..z.len() {
                let p = 1.0 / (1.0 + libm::exp(-z[k]));
                loss += z[k].max(0.0) - z[k] * t[k] + libm::log1p(libm::exp(-z[k].abs()));
                g[k] = (p - t[k]) / n;
            }
        } else {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(z.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            for k in 0..z.len() {
                loss -= t[k] * (z[k] - lse);
                g[k] = (libm::exp(z[k] - lse) - t[k]) / n;
            }
        }
    }
    loss / n
}

fn check_classes(labels: &Labels) -> Result<()> {
    if let Labels::Single(v) = labels {
        if v.iter().all(|&c| c == v[0]) {
            bail!(Input, "training set has a single class");
        }
    }
    Ok(())
}

fn batches(n: usize, size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size).map(|c| c.to_vec()).collect()
}

/// A linear classifier on standardized frozen embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub standardizer: Standardizer,
    pub linear: Linear,
}

impl LinearProbe {
    pub fn scores(&self, x: &Tensor) -> Tensor {
        self.linear.forward(&self.standardizer.apply(x))
    }
}

pub fn train_linear_probe(x: &Tensor, labels: &Labels, n_classes: usize, lr: f64, cfg: &ProbeConfig) -> Result<LinearProbe> {
    cfg.validate()?;
    if x.rows() != labels.len() || x.rows() == 0 {
        bail!(Shape, "{} embeddings for {} labels", x.rows(), labels.len());
    }
    check_classes(labels)?;
    let targets = labels.targets(n_classes)?;
    let multi = matches!(labels, Labels::Multi(_));
    let standardizer = Standardizer::fit(x)?;
    let xs = standardizer.apply(x);
    let mut r = rng::seeded(derive_seed(cfg.seed, &[0x9B0E]));
    let mut linear = Linear::init_uniform(x.cols(), n_classes, &mut r);
    let mut opt = Sgd::new(&linear, cfg.momentum, cfg.weight_decay);
    let steps_per_epoch = x.rows().div_ceil(cfg.batch_size) as u64;
    let sched = CosineSchedule::new(lr, cfg.lr_end, 0, steps_per_epoch * cfg.epochs as u64)?;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        for idx in batches(x.rows(), cfg.batch_size, &mut r) {
            let bx = gather(&xs, &idx);
            let bt = gather(&targets, &idx);
            let logits = linear.forward(&bx);
            let mut dlogits = Tensor::zeros(logits.rows(), n_classes);
            let loss = classification_loss(&logits, &bt, multi, &mut dlogits);
            if !loss.is_finite() {
                bail!(Numerical, "probe loss diverged at lr {lr}");
            }
            let mut g = linear.zeros_like();
            linear.backward_params(&bx, &dlogits, &mut g);
            opt.step(&mut linear, &g, sched.value(step)?)?;
            step += 1;
        }
    }
    Ok(LinearProbe { standardizer, linear })
}

fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(idx.len(), x.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSelection {
    pub probe: LinearProbe,
    pub lr: f64,
    pub valid_score: f64,
}

/// Trains one probe per grid learning rate and keeps the best on the
/// validation set (earliest grid entry on ties).
pub fn select_linear_probe(
    train_x: &Tensor,
    train_labels: &Labels,
    valid_x: &Tensor,
    valid_labels: &Labels,
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeSelection> {
    cfg.validate()?;
    let mut best: Option<ProbeSelection> = None;
    for &lr in &cfg.lr_grid {
        let probe = match train_linear_probe(train_x, train_labels, n_classes, lr, cfg) {
            Ok(p) => p,
            Err(crate::Error::Numerical(_)) => continue,
            Err(e) => return Err(e),
        };
        let s = valid_labels.score(&probe.scores(valid_x))?;
        if best.as_ref().is_none_or(|b| s > b.valid_score) {
            best = Some(ProbeSelection { probe, lr, valid_score: s });
        }
    }
    best.ok_or_else(|| crate::Error::Numerical("every grid learning rate diverged".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Upper bound of the Mixup ratio for inputs and labels; 0 disables.
    pub mixup_alpha: f64,
    /// Random resized crop on training inputs, if set.
    pub rrc: Option<AugmentConfig>,
    /// Training crop length in frames.
    pub segment_frames: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 512,
            lr: 1e-2,
            warmup_epochs: 5,
            lr_end: 1e-6,
            momentum: 0.9,
            weight_decay: 0.0,
            mixup_alpha: 0.0,
            rrc: None,
            segment_frames: 600,
            seed: 0,
        }
    }
}

/// Encoder plus linear classifier over the finetune embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetunedModel {
    pub encoder: Encoder,
    pub head: Linear,
}

impl Module for FinetunedModel {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.head.visit(&join(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>) {
        self.encoder.visit_mut(&join(prefix, "encoder"), out);
        self.head.visit_mut(&join(prefix, "head"), out);
    }
}

impl FinetunedModel {
    pub fn scores_from_embeddings(&self, x: &Tensor) -> Tensor {
        self.head.forward(x)
    }
}

/// Convex combination of two target rows.
pub fn mix_targets(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - lambda) * x + lambda * y).collect()
}

/// Jointly trains the encoder and a linear classifier on normalized clip
/// spectrograms. Each step crops a random training segment per clip and
/// optionally applies Mixup (inputs and labels) and RRC.
pub fn finetune(encoder: &Encoder, clips: &[MelSpec], labels: &Labels, n_classes: usize, cfg: &FinetuneConfig) -> Result<FinetunedModel> {
    if clips.len() != labels.len() || clips.is_empty() {
        bail!(Shape, "{} clips for {} labels", clips.len(), labels.len());
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.segment_frames == 0 || cfg.warmup_epochs > cfg.epochs {
        bail!(Config, "invalid finetune configuration {:?}", cfg);
    }
    if !(0.0..=1.0).contains(&cfg.mixup_alpha) {
        bail!(Config, "mixup_alpha must lie in [0, 1], got {}", cfg.mixup_alpha);
    }
    check_classes(labels)?;
    let targets = labels.targets(n_classes)?;
    let multi = matches!(labels, Labels::Multi(_));
    let mut r = rng::seeded(derive_seed(cfg.seed, &[0xF17E]));
    let d = encoder.cfg.dim;
    let mut model = FinetunedModel { encoder: encoder.clone(), head: Linear::init_uniform(2 * d, n_classes, &mut r) };
    let mut opt = Sgd::new(&model, cfg.momentum, cfg.weight_decay);
    let spe = clips.len().div_ceil(cfg.batch_size) as u64;
    let sched = CosineSchedule::new(cfg.lr, cfg.lr_end, spe * cfg.warmup_epochs as u64, spe * cfg.epochs as u64)?;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        for idx in batches(clips.len(), cfg.batch_size, &mut r) {
            let mut inputs = Vec::with_capacity(idx.len());
            let mut tgt = Tensor::zeros(idx.len(), n_classes);
            for (row, &i) in idx.iter().enumerate() {
                let mut x = random_crop(&clips[i], cfg.segment_frames, &mut r)?;
                let mut t = targets.row(i).to_vec();
                if cfg.mixup_alpha > 0.0 {
                    let j = idx[rng::uniform_int(&mut r, 0, idx.len() as i64 - 1) as usize];
                    let lambda = rng::uniform(&mut r, 0.0, cfg.mixup_alpha);
                    let partner = random_crop(&clips[j], cfg.segment_frames, &mut r)?;
                    if partner.values.shape() == x.values.shape() {
                        x.values = mix_log_domain(&x.values, &partner.values, lambda)?;
                        t = mix_targets(&t, targets.row(j), lambda);
                    }
                }
                if let Some(aug) = &cfg.rrc {
                    x = rrc_augment(&x, aug, &mut r)?;
                }
                tgt.row_mut(row).copy_from_slice(&t);
                inputs.push(x);
            }
            let mut grads = model.zeros_like();
            let loss = finetune_batch(&model, &inputs, &tgt, multi, &mut grads)?;
            if !loss.is_finite() {
                bail!(Numerical, "finetune loss diverged at step {step}");
            }
            opt.step(&mut model, &grads, sched.value(step)?)?;
            step += 1;
        }
    }
    Ok(model)
}

fn random_crop(spec: &MelSpec, frames: usize, r: &mut Rng) -> Result<MelSpec> {
    if spec.frames() <= frames {
        return Ok(spec.clone());
    }
    let start = rng::uniform_int(r, 0, (spec.frames() - frames) as i64) as usize;
    spec.crop(start, frames)
}

/// Forward and backward of the finetune loss over one batch; inputs of equal
/// token count share an encoder pass.
fn finetune_batch(model: &FinetunedModel, inputs: &[MelSpec], targets: &Tensor, multi: bool, grads: &mut FinetunedModel) -> Result<f64> {
    let d = model.encoder.cfg.dim;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, x) in inputs.iter().enumerate() {
        groups.entry(model.encoder.cfg.token_count(x.frames())).or_default().push(i);
    }
    let n = inputs.len() as f64;
    let mut loss = 0.0;
    for members in groups.values() {
        let refs: Vec<&MelSpec> = members.iter().map(|&i| &inputs[i]).collect();
        let (out, cache) = model.encoder.forward(&refs, false)?;
        let seq = out.seq;
        let mut emb = Tensor::zeros(members.len(), 2 * d);
        for (b, seq_out) in out.into_sequences().into_iter().enumerate() {
            emb.row_mut(b).copy_from_slice(&extract_embedding(&seq_out, EmbeddingMode::Finetune)?.vector);
        }
        let logits = model.head.forward(&emb);
        let t = gather(targets, members);
        let mut dlogits = Tensor::zeros(logits.rows(), logits.cols());
        // Rescale group means into a mean over the whole batch.
        let w = members.len() as f64 / n;
        loss += w * classification_loss(&logits, &t, multi, &mut dlogits);
        dlogits.scale(w);
        let demb = model.head.backward(&emb, &dlogits, &mut grads.head);
        let mut dtok = Tensor::zeros(members.len() * seq, d);
        let inv_t = 1.0 / (seq - 1) as f64;
        for b in 0..members.len() {
            let g = demb.row(b);
            dtok.row_mut(b * seq).copy_from_slice(&g[..d]);
            for r in 1..seq {
                for (o, v) in dtok.row_mut(b * seq + r).iter_mut().zip(&g[d..]) {
                    *o = v * inv_t;
                }
            }
        }
        model.encoder.backward(&cache, &dtok, &mut grads.encoder)?;
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KFoldResult {
    pub per_fold: Vec<f64>,
    pub mean: f64,
}

/// Runs `evaluate(train_indices, test_indices)` once per fold id in
/// `0..n_folds` and averages the scores.
pub fn kfold_evaluate<E: From<crate::Error>>(
    fold_of: &[usize],
    n_folds: usize,
    mut evaluate: impl FnMut(&[usize], &[usize]) -> core::result::Result<f64, E>,
) -> core::result::Result<KFoldResult, E> {
    check_folds(fold_of, n_folds)?;
    let mut per_fold = Vec::with_capacity(n_folds);
    for k in 0..n_folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..fold_of.len()).partition(|&i| fold_of[i] == k);
        per_fold.push(evaluate(&train, &test)?);
    }
    let mean = per_fold.iter().sum::<f64>() / n_folds as f64;
    Ok(KFoldResult { per_fold, mean })
}

fn check_folds(fold_of: &[usize], n_folds: usize) -> Result<()> {
    if n_folds < 2 {
        bail!(Config, "k-fold evaluation needs at least 2 folds, got {n_folds}");
    }
    if let Some(&bad) = fold_of.iter().find(|&&f| f >= n_folds) {
        bail!(Input, "fold id {bad} outside 0..{n_folds}");
    }
    if let Some(k) = (0..n_folds).find(|k| !fold_of.contains(k)) {
        bail!(Input, "fold {k} is empty");
    }
    Ok(())
}
