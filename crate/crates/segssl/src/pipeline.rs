//! End-to-end runs: corpus loading, statistics, pre-training with
//! checkpoints, downstream evaluation and the segment-length sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};

use segssl_core::dsp::{compute_global_stats, normalize, GlobalStats, MelExtractor, MelSpec, WaveClip};
use segssl_core::encoder::{EmbeddingMode, Encoder};
use segssl_core::eval::{chunk_and_embed, finetune, kfold_evaluate, select_linear_probe, ChunkPolicy, Labels};
use segssl_core::train::{StepReport, TrainState};
use segssl_core::Tensor;

use crate::checkpoint;
use crate::config::{Protocol, RunConfig};
use crate::error::{Error, Result};
use crate::manifest::{Manifest, SplitName};
use crate::metrics::MetricsLog;
use crate::wav::load_clip;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";

/// Waveforms of a manifest, resampled to the configured rate.
pub struct Corpus {
    pub manifest: Manifest,
    pub clips: Vec<WaveClip>,
}

impl Corpus {
    pub fn load(manifest_path: &Path, sample_rate: u32) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let clips = manifest.records.iter().map(|r| load_clip(&manifest.resolve(r), sample_rate)).collect::<Result<_>>()?;
        Ok(Self { manifest, clips })
    }
}

pub fn extractor(cfg: &RunConfig) -> Result<MelExtractor> {
    Ok(MelExtractor::new(cfg.mel_params()?, cfg.mel.sample_rate)?)
}

pub fn corpus_stats(cfg: &RunConfig, clips: &[WaveClip]) -> Result<GlobalStats> {
    Ok(compute_global_stats(clips.iter(), &cfg.mel_params()?)?)
}

/// Normalized log-mel spectrograms of whole clips.
pub fn spectrograms(ex: &MelExtractor, stats: &GlobalStats, clips: &[WaveClip]) -> Result<Vec<MelSpec>> {
    par_map(clips, |c| Ok(normalize(&ex.compute(c)?, stats)?))
}

/// Order-preserving map over worker threads.
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let parts: Vec<Result<Vec<U>>> = thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<U>>>())).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Default)]
pub struct PretrainOptions {
    /// Directory for checkpoints, metrics and the config copy; `None` keeps
    /// the run in memory.
    pub out_dir: Option<PathBuf>,
    /// Continue from the checkpoint in `out_dir`.
    pub resume: bool,
    /// Stop after this many total steps even if the schedule runs longer.
    pub stop_at: Option<u64>,
    /// Print one progress line per epoch to stderr.
    pub verbose: bool,
}

pub struct PretrainRun {
    pub state: TrainState,
    pub reports: Vec<StepReport>,
}

pub fn pretrain(cfg: &RunConfig, specs: &[MelSpec], opts: &PretrainOptions) -> Result<PretrainRun> {
    let hash = cfg.hash();
    let mut state = match (&opts.out_dir, opts.resume) {
        (Some(dir), true) => checkpoint::read(&dir.join(CHECKPOINT_FILE))?.restore(Some(&hash))?,
        (None, true) => return Err(Error::Config("resuming needs an output directory".into())),
        _ => TrainState::new(cfg.pretrain()?, specs.len())?,
    };
    if state.n_clips != specs.len() {
        return Err(Error::Config(format!("checkpoint covers {} clips, corpus has {}", state.n_clips, specs.len())));
    }
    let mut log = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
            fs::write(dir.join(CONFIG_FILE), cfg.to_json()).map_err(Error::io(dir.join(CONFIG_FILE)))?;
            Some(MetricsLog::open(&dir.join(METRICS_FILE), &hash, state.step)?)
        }
        None => None,
    };
    let every = cfg.data.checkpoint_every;
    let end = opts.stop_at.map_or(state.total_steps(), |s| s.min(state.total_steps()));
    let spe = state.steps_per_epoch();
    let mut reports = Vec::new();
    while state.step < end {
        let r = state.step_on(specs)?;
        if let Some(l) = log.as_mut() {
            l.append(&r)?;
        }
        if opts.verbose && (r.step + 1) % spe == 0 {
            eprintln!(
                "epoch {:>4} step {:>7} loss {:.4} lr {:.2e} m {:.5} cos {:.4} std {:.4}",
                r.epoch, r.step, r.loss, r.lr, r.m, r.cosine_mean, r.embed_std
            );
        }
        reports.push(r);
        if let Some(dir) = &opts.out_dir {
            if every > 0 && state.step % every == 0 {
                log.as_mut().expect("log exists with out_dir").flush()?;
                checkpoint::save(&dir.join(CHECKPOINT_FILE), &state, cfg)?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        log.as_mut().expect("log exists with out_dir").flush()?;
        checkpoint::save(&dir.join(CHECKPOINT_FILE), &state, cfg)?;
    }
    Ok(PretrainRun { state, reports })
}

/// The encoder a run would start from, for random-init controls.
pub fn initial_encoder(cfg: &RunConfig, n_clips: usize) -> Result<Encoder> {
    Ok(TrainState::new(cfg.pretrain()?, n_clips)?.teacher.encoder)
}

/// A labeled downstream dataset.
pub struct Task {
    pub name: String,
    pub clips: Vec<WaveClip>,
    pub labels: Labels,
    pub n_classes: usize,
    pub folds: Vec<Option<usize>>,
    pub splits: Vec<Option<SplitName>>,
}

impl Task {
    pub fn from_corpus(name: &str, corpus: Corpus) -> Result<Self> {
        let labels = corpus.manifest.labels()?;
        let n_classes = corpus.manifest.n_classes()?;
        if n_classes < 2 {
            return Err(Error::Config(format!("task {name} needs at least 2 classes, found {n_classes}")));
        }
        let folds = corpus.manifest.records.iter().map(|r| r.fold).collect();
        let splits = corpus.manifest.records.iter().map(|r| r.split).collect();
        Ok(Self { name: name.to_string(), clips: corpus.clips, labels, n_classes, folds, splits })
    }

    fn split_indices(&self, s: SplitName) -> Vec<usize> {
        (0..self.clips.len()).filter(|&i| self.splits[i] == Some(s)).collect()
    }

    fn fold_ids(&self, n_folds: usize) -> Result<Vec<usize>> {
        self.folds
            .iter()
            .enumerate()
            .map(|(i, f)| match f {
                Some(f) if *f < n_folds => Ok(*f),
                Some(f) => Err(Error::Config(format!("record {i} has fold {f}, outside 0..{n_folds}"))),
                None => Err(Error::Config(format!("record {i} has no fold id but {n_folds} folds were requested"))),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub value: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: String,
    pub protocol: String,
    /// Selected learning rate per fold (one entry for a single split).
    pub lr_chosen: Vec<f64>,
    pub metric_name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_fold: Option<Vec<FoldResult>>,
    pub config_hash: String,
}

/// Chunked embeddings of every clip, one row each.
pub fn embed_all(encoder: &Encoder, clips: &[WaveClip], ex: &MelExtractor, stats: &GlobalStats, mode: EmbeddingMode, policy: &ChunkPolicy) -> Result<Tensor> {
    let rows = par_map(clips, |c| Ok(chunk_and_embed(c, ex, stats, encoder, mode, policy)?.vector))?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(Tensor::from_rows(&refs))
}

fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let refs: Vec<&[f64]> = idx.iter().map(|&i| x.row(i)).collect();
    Tensor::from_rows(&refs)
}

/// Train/valid/test indices. Validation comes from the valid split (single
/// split) or from the next fold round-robin (k-fold); with no validation
/// clips the training set doubles as validation.
struct Partition {
    train: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
}

fn single_split(task: &Task) -> Result<Partition> {
    let train = task.split_indices(SplitName::Train);
    let test = task.split_indices(SplitName::Test);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!("task {} needs train and test records (or folds)", task.name)));
    }
    let mut valid = task.split_indices(SplitName::Valid);
    if valid.is_empty() {
        valid = train.clone();
    }
    Ok(Partition { train, valid, test })
}

fn fold_partition(fold_of: &[usize], n_folds: usize, train: &[usize], test: &[usize], k: usize) -> Partition {
    let vfold = (k + 1) % n_folds;
    let (valid, fit): (Vec<usize>, Vec<usize>) = train.iter().partition(|&&i| fold_of[i] == vfold);
    if valid.is_empty() || fit.is_empty() {
        return Partition { train: train.to_vec(), valid: train.to_vec(), test: test.to_vec() };
    }
    Partition { train: fit, valid, test: test.to_vec() }
}

/// Runs the configured protocol on `task` with a frozen copy of `encoder`
/// (linear) or a tuned copy (finetune).
pub fn evaluate(cfg: &RunConfig, encoder: &Encoder, task: &Task, stats: &GlobalStats) -> Result<EvalResult> {
    let ex = extractor(cfg)?;
    let protocol = cfg.protocol()?;
    let policy = cfg.chunk_policy();
    let run_one: Box<dyn Fn(&Partition) -> Result<(f64, f64)> + '_> = match protocol {
        Protocol::Linear => {
            let mode = EmbeddingMode::LinearEval(cfg.block_pooling()?);
            let emb = embed_all(encoder, &task.clips, &ex, stats, mode, &policy)?;
            let probe_cfg = cfg.probe();
            Box::new(move |p: &Partition| {
                let sel = select_linear_probe(
                    &gather_rows(&emb, &p.train),
                    &task.labels.subset(&p.train),
                    &gather_rows(&emb, &p.valid),
                    &task.labels.subset(&p.valid),
                    task.n_classes,
                    &probe_cfg,
                )?;
                let test = task.labels.subset(&p.test).score(&sel.probe.scores(&gather_rows(&emb, &p.test)))?;
                Ok((test, sel.lr))
            })
        }
        Protocol::Finetune => {
            let specs = spectrograms(&ex, stats, &task.clips)?;
            let ex = &ex;
            Box::new(move |p: &Partition| {
                let train_specs: Vec<MelSpec> = p.train.iter().map(|&i| specs[i].clone()).collect();
                let train_labels = task.labels.subset(&p.train);
                let mut best: Option<(f64, f64, segssl_core::eval::FinetunedModel)> = None;
                for &lr in &cfg.eval.lr_grid {
                    let model = match finetune(encoder, &train_specs, &train_labels, task.n_classes, &cfg.finetune(lr)) {
                        Ok(m) => m,
                        Err(segssl_core::Error::Numerical(_)) => continue,
                        Err(e) => return Err(e.into()),
                    };
                    let clips: Vec<WaveClip> = p.valid.iter().map(|&i| task.clips[i].clone()).collect();
                    let e = embed_all(&model.encoder, &clips, ex, stats, EmbeddingMode::Finetune, &policy)?;
                    let s = task.labels.subset(&p.valid).score(&model.scores_from_embeddings(&e))?;
                    if best.as_ref().is_none_or(|b| s > b.0) {
                        best = Some((s, lr, model));
                    }
                }
                let (_, lr, model) = best.ok_or_else(|| segssl_core::Error::Numerical("every grid learning rate diverged".into()))?;
                let clips: Vec<WaveClip> = p.test.iter().map(|&i| task.clips[i].clone()).collect();
                let e = embed_all(&model.encoder, &clips, ex, stats, EmbeddingMode::Finetune, &policy)?;
                Ok((task.labels.subset(&p.test).score(&model.scores_from_embeddings(&e))?, lr))
            })
        }
    };
    let (value, lr_chosen, per_fold) = if cfg.eval.folds >= 2 {
        let n = cfg.eval.folds;
        let fold_of = task.fold_ids(n)?;
        let mut lrs = Vec::new();
        let res = kfold_evaluate(&fold_of, n, |train, test| {
            let (v, lr) = run_one(&fold_partition(&fold_of, n, train, test, lrs.len()))?;
            lrs.push(lr);
            Ok::<_, Error>(v)
        })?;
        let per = res.per_fold.iter().zip(&lrs).enumerate().map(|(fold, (&value, &lr))| FoldResult { fold, value, lr }).collect();
        (res.mean, lrs, Some(per))
    } else {
        let (v, lr) = run_one(&single_split(task)?)?;
        (v, vec![lr], None)
    };
    Ok(EvalResult {
        task: task.name.clone(),
        protocol: match protocol {
            Protocol::Linear => "linear".into(),
            Protocol::Finetune => "finetune".into(),
        },
        lr_chosen,
        metric_name: task.labels.metric_name().into(),
        value,
        per_fold,
        config_hash: cfg.hash(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub segment_len_s: f64,
    pub score: f64,
    /// Min-max normalized score; absent when all scores are equal.
    pub normalized: Option<f64>,
}

/// Config of one sweep point: two segments of `len` seconds, without the
/// overlap guarantee (short segments cannot satisfy it) and with enough
/// positional rows for the segment.
pub fn sweep_config(base: &RunConfig, len: f64) -> Result<RunConfig> {
    let mut c = base.clone();
    c.views.segment_len_s = len;
    c.views.require_overlap = false;
    let enc = c.encoder_config()?;
    let frames = (len / c.mel.hop_s).round() as usize + segssl_core::views::EDGE_FRAMES;
    let need = enc.token_count(frames);
    if need > enc.max_tokens {
        c.encoder.max_tokens = Some(need);
    }
    c.validate()?;
    Ok(c)
}

/// Pre-trains once per segment length and scores each teacher encoder with
/// the evaluation protocol.
pub fn sweep_segment_length(
    base: &RunConfig,
    lengths: &[f64],
    pretrain_clips: &[WaveClip],
    task: &Task,
    verbose: bool,
) -> Result<Vec<SweepRow>> {
    if lengths.is_empty() {
        return Err(Error::Config("the sweep needs at least one segment length".into()));
    }
    let stats = corpus_stats(base, pretrain_clips)?;
    let ex = extractor(base)?;
    let specs = spectrograms(&ex, &stats, pretrain_clips)?;
    let mut scores = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let cfg = sweep_config(base, len)?;
        let run = pretrain(&cfg, &specs, &PretrainOptions { verbose, ..Default::default() })?;
        let r = evaluate(&cfg, &run.state.teacher.encoder, task, &stats)?;
        if verbose {
            eprintln!("segment {len} s: {} {:.4}", r.metric_name, r.value);
        }
        scores.push(r.value);
    }
    Ok(normalize_scores(lengths, &scores))
}

pub fn normalize_scores(lengths: &[f64], scores: &[f64]) -> Vec<SweepRow> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lengths
        .iter()
        .zip(scores)
        .map(|(&segment_len_s, &score)| SweepRow { segment_len_s, score, normalized: (hi > lo).then(|| (score - lo) / (hi - lo)) })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], config_hash: &str) -> String {
    let mut s = format!("# config_hash={config_hash}\nsegment_len_s,score,normalized\n");
    for r in rows {
        let n = r.normalized.map_or(String::new(), |v| format!("{v:.6}"));
        s.push_str(&format!("{},{:.6},{}\n", r.segment_len_s, r.score, n));
    }
    s
}
