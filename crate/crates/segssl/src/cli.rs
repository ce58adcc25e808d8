//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use segssl_core::synth::{generate_clip, Generator, Span, SynthSpec};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::manifest::{ClipRecord, Manifest, SplitName};
use crate::pipeline::{self, Corpus, PretrainOptions, Task};
use crate::plot::line_chart_svg;
use crate::stats::StatsFile;
use crate::wav::write_wav;

#[derive(Parser, Debug)]
#[command(name = "segssl", version, about = "Segment-level teacher-student audio pre-training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set data.seed=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        if let Some(p) = &self.config {
            require(p)?;
        }
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Global min/max of the log-mel values over a corpus.
    ComputeStats {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Teacher-student pre-training with checkpoints and a metrics log.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop once this many steps have been taken in total.
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Linear or finetune evaluation of a checkpoint's teacher encoder.
    Eval {
        /// Replaces the checkpoint's `eval` section with this file's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate the untrained initial encoder instead (control run).
        #[arg(long)]
        random_init: bool,
    },
    /// Pre-train and probe once per segment length; writes CSV and SVG.
    SweepSegmentLength {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Pre-training corpus.
        #[arg(long)]
        manifest: PathBuf,
        /// Labeled task corpus; defaults to the pre-training manifest.
        #[arg(long)]
        task_manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<f64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Writes a deterministic synthetic corpus and its manifest.
    MakeSynthetic {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 300)]
        n_clips: usize,
        #[arg(long, default_value_t = 10.0)]
        clip_len_s: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        n_folds: usize,
        /// Class preset: "tones" or "modulation".
        #[arg(long, default_value = "modulation")]
        preset: String,
        /// Explicit class, e.g. `am_tone:500-3000:1-1.5` (repeatable;
        /// replaces the preset). Kinds: pure_tone:F0, chirp:F0:F1,
        /// noise_band:CENTER:WIDTH, am_tone:F0:RATE.
        #[arg(long = "class")]
        classes: Vec<String>,
    },
}

fn require(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", p.display())))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, text).map_err(Error::io(path))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ComputeStats { cfg, manifest, out } => {
            require(&manifest)?;
            let cfg = cfg.load()?;
            let corpus = Corpus::load(&manifest, cfg.mel.sample_rate)?;
            let stats = pipeline::corpus_stats(&cfg, &corpus.clips)?;
            StatsFile::new(&stats, &cfg.mel_params()?, &cfg.hash(), corpus.clips.len()).save(&out)?;
            eprintln!("min {} max {} over {} frames", stats.min_val, stats.max_val, stats.n_frames_seen);
        }
        Command::Pretrain { cfg, manifest, stats, out_dir, resume, max_steps, quiet } => {
            require(&manifest)?;
            require(&stats)?;
            let cfg = cfg.load()?;
            let stats = StatsFile::load(&stats)?.stats_for(&cfg.mel_params()?)?;
            let corpus = Corpus::load(&manifest, cfg.mel.sample_rate)?;
            let specs = pipeline::spectrograms(&pipeline::extractor(&cfg)?, &stats, &corpus.clips)?;
            let opts = PretrainOptions { out_dir: Some(out_dir.clone()), resume, stop_at: max_steps, verbose: !quiet };
            let run = pipeline::pretrain(&cfg, &specs, &opts)?;
            eprintln!("stopped at step {} of {}; checkpoint in {}", run.state.step, run.state.total_steps(), out_dir.display());
        }
        Command::Eval { config, overrides, checkpoint: ckpt_path, manifest, stats, out, random_init } => {
            require(&ckpt_path)?;
            require(&manifest)?;
            require(&stats)?;
            let ckpt = checkpoint::read(&ckpt_path)?;
            let mut doc = serde_json::to_value(&ckpt.manifest.config).expect("config is serializable");
            if let Some(p) = &config {
                require(p)?;
                let file = RunConfig::load(Some(p), &[])?;
                doc["eval"] = serde_json::to_value(&file.eval).expect("config is serializable");
            }
            for o in &overrides {
                crate::config::apply_override(&mut doc, o)?;
            }
            let cfg = RunConfig::from_value(doc)?;
            let state = ckpt.restore(None)?;
            let encoder = if random_init { pipeline::initial_encoder(&ckpt.manifest.config, state.n_clips)? } else { state.teacher.encoder };
            let stats = StatsFile::load(&stats)?.stats_for(&cfg.mel_params()?)?;
            let corpus = Corpus::load(&manifest, cfg.mel.sample_rate)?;
            let name = manifest.file_stem().map_or("task".into(), |s| s.to_string_lossy().into_owned());
            let task = Task::from_corpus(&name, corpus)?;
            let result = pipeline::evaluate(&cfg, &encoder, &task, &stats)?;
            eprintln!("{} {} = {:.4}", result.protocol, result.metric_name, result.value);
            write_file(&out, &(serde_json::to_string_pretty(&result).expect("result is serializable") + "\n"))?;
        }
        Command::SweepSegmentLength { cfg, manifest, task_manifest, lengths, out_dir, quiet } => {
            require(&manifest)?;
            let cfg = cfg.load()?;
            let corpus = Corpus::load(&manifest, cfg.mel.sample_rate)?;
            let task_corpus = match &task_manifest {
                Some(p) => {
                    require(p)?;
                    Corpus::load(p, cfg.mel.sample_rate)?
                }
                None => Corpus::load(&manifest, cfg.mel.sample_rate)?,
            };
            let task = Task::from_corpus("sweep", task_corpus)?;
            let rows = pipeline::sweep_segment_length(&cfg, &lengths, &corpus.clips, &task, !quiet)?;
            fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
            write_file(&out_dir.join("sweep.csv"), &pipeline::sweep_csv(&rows, &cfg.hash()))?;
            let normalized = rows.iter().all(|r| r.normalized.is_some());
            if !normalized {
                eprintln!("warning: scores do not vary, so normalization is undefined; plotting raw scores");
            }
            let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.segment_len_s, r.normalized.unwrap_or(r.score))).collect();
            let y = if normalized { "normalized score" } else { "score" };
            write_file(&out_dir.join("sweep.svg"), &line_chart_svg("Score vs segment length", "segment length (s)", y, &points))?;
        }
        Command::MakeSynthetic { out_dir, n_clips, clip_len_s, seed, n_folds, preset, classes } => {
            let mut spec = match preset.as_str() {
                "tones" => SynthSpec::tones(n_clips, seed),
                "modulation" => SynthSpec::modulation(n_clips, seed),
                other => return Err(Error::Config(format!("unknown preset {other:?}; use \"tones\" or \"modulation\""))),
            };
            if !classes.is_empty() {
                spec.classes = classes.iter().map(|c| parse_class(c)).collect::<Result<_>>()?;
            }
            spec.clip_len_s = clip_len_s;
            spec.n_folds = n_folds;
            spec.validate()?;
            let args: Vec<String> = std::env::args().collect();
            let m = make_synthetic(&spec, &out_dir, json!(args))?;
            eprintln!("wrote {} clips to {}", m.records.len(), out_dir.display());
        }
    }
    Ok(())
}

/// Writes `clip_NNNNN.wav` files and `manifest.jsonl` into `out_dir`.
pub fn make_synthetic(spec: &SynthSpec, out_dir: &Path, args: serde_json::Value) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let mut records = Vec::with_capacity(spec.n_clips);
    for i in 0..spec.n_clips {
        let c = generate_clip(spec, i)?;
        let name = format!("clip_{i:05}.wav");
        write_wav(&out_dir.join(&name), &c.clip)?;
        let split = match c.split {
            segssl_core::synth::Split::Train => SplitName::Train,
            segssl_core::synth::Split::Valid => SplitName::Valid,
            segssl_core::synth::Split::Test => SplitName::Test,
        };
        records.push(ClipRecord { path: name, label: Some(c.class), labels: None, fold: Some(c.fold), split: Some(split) });
    }
    let classes: Vec<String> = spec.classes.iter().map(|g| format!("{g:?}")).collect();
    let header = json!({
        "args": args,
        "n_classes": spec.classes.len(),
        "seed": spec.seed,
        "clip_len_s": spec.clip_len_s,
        "sample_rate": spec.sample_rate,
        "n_folds": spec.n_folds,
        "classes": classes,
    });
    let m = Manifest::new(Some(header), records, out_dir);
    m.save(&out_dir.join("manifest.jsonl"))?;
    Ok(m)
}

fn parse_span(s: &str) -> Result<Span> {
    let bad = || Error::Config(format!("range {s:?} is not LO-HI or a number"));
    match s.split_once('-') {
        Some((a, b)) => Ok(Span::new(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)),
        None => {
            let v = s.parse().map_err(|_| bad())?;
            Ok(Span::new(v, v))
        }
    }
}

pub fn parse_class(s: &str) -> Result<Generator> {
    let parts: Vec<&str> = s.split(':').collect();
    let spans = parts[1..].iter().map(|p| parse_span(p)).collect::<Result<Vec<_>>>()?;
    match (parts[0], spans.as_slice()) {
        ("pure_tone", [f0]) => Ok(Generator::PureTone { f0: *f0 }),
        ("chirp", [f0, f1]) => Ok(Generator::Chirp { f0: *f0, f1: *f1 }),
        ("noise_band", [center, width]) => Ok(Generator::NoiseBand { center: *center, width: *width }),
        ("am_tone", [f0, rate]) => Ok(Generator::AmTone { f0: *f0, rate: *rate }),
        _ => Err(Error::Config(format!("cannot parse class {s:?}"))),
    }
}
