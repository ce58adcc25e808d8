//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.
//!
//! The desk-scale runs (9 to 11) dominate the runtime: three 50-epoch
//! pre-training runs on one CPU core.

use std::process::ExitCode;
use std::time::Instant;

use segssl::checkpoint;
use segssl::config::RunConfig;
use segssl::manifest::SplitName;
use segssl::pipeline::{self, PretrainOptions, Task};
use segssl_core::dsp::{GlobalStats, MelExtractor, MelParams, MelSpec, WaveClip};
use segssl_core::encoder::{param_count, EncoderConfig};
use segssl_core::eval::{accuracy, mean_average_precision, min_samples_for_frames, plan_chunks, ChunkPolicy, Labels};
use segssl_core::module::Module;
use segssl_core::nn::NormMode;
use segssl_core::objective::{
    ema_update, init_teacher, loss_and_grads, normalized_mse, symmetric_loss, BufferUpdate, HeadConfig, ObjectiveConfig, Student, Teacher,
};
use segssl_core::rng::{self, Rng};
use segssl_core::synth::{generate_corpus, Split, SynthSpec};
use segssl_core::train::{collapse_diagnostics, PretrainConfig, TrainState};
use segssl_core::views::{sample_segment_pair, segment_pair_at, SegmentPairConfig};
use segssl_core::Tensor;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

fn uniform(r: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng::uniform(r, lo, hi)
}

fn rand_vec(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| uniform(r, -3.0, 3.0)).collect()
}

fn rand_spec(r: &mut Rng, frames: usize, bins: usize) -> MelSpec {
    MelSpec::new(Tensor::from_vec(frames, bins, (0..frames * bins).map(|_| uniform(r, 0.0, 1.0)).collect()), 0.01).unwrap()
}

fn c1_param_counts() -> Outcome {
    let s = param_count(&EncoderConfig::small()) as f64;
    let b = param_count(&EncoderConfig::base()) as f64;
    let pass = (19.8e6..=24.2e6).contains(&s) && (77.4e6..=94.6e6).contains(&b);
    Ok((pass, format!("small {:.2}M in [19.8, 24.2], base {:.2}M in [77.4, 94.6]", s / 1e6, b / 1e6)))
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig { n_blocks: 2, n_heads: 2, dim: 16, inner_dim: 32, stack_frames: 2, input_bins: 4, max_tokens: 8, final_norm: true }
}

fn tiny_heads() -> HeadConfig {
    HeadConfig { hidden_dim: 16, out_dim: 8 }
}

/// A student and a teacher that differs from it.
fn tiny_pair(r: &mut Rng) -> (Student, Teacher) {
    let s = Student::new(tiny_encoder(), tiny_heads(), true, r).unwrap();
    let other = Student::new(tiny_encoder(), tiny_heads(), true, r).unwrap();
    let mut t = init_teacher(&s);
    ema_update(&mut t, &other, 0.5, BufferUpdate::Ema).unwrap();
    (s, t)
}

fn c2_loss_geometry() -> Outcome {
    let mut r = rng::seeded(2);
    let (mut max_dev, mut in_bounds, mut max_scale) = (0.0f64, true, 0.0f64);
    for _ in 0..1000 {
        let n = 2 + (rng::uniform_int(&mut r, 0, 62) as usize);
        let (p, z) = (rand_vec(&mut r, n), rand_vec(&mut r, n));
        let l = normalized_mse(&p, &z)?;
        let dot: f64 = p.iter().zip(&z).map(|(a, b)| a * b).sum();
        let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nz = z.iter().map(|a| a * a).sum::<f64>().sqrt();
        max_dev = max_dev.max((l - (2.0 - 2.0 * dot / (np * nz))).abs());
        in_bounds &= (0.0..=4.0).contains(&l);
        let (a, b) = (10f64.powf(uniform(&mut r, -3.0, 3.0)), 10f64.powf(uniform(&mut r, -3.0, 3.0)));
        let ps: Vec<f64> = p.iter().map(|v| v * a).collect();
        let zs: Vec<f64> = z.iter().map(|v| v * b).collect();
        max_scale = max_scale.max((normalized_mse(&ps, &zs)? - l).abs());
    }
    let mut max_swap = 0.0f64;
    for _ in 0..5 {
        let (s, t) = tiny_pair(&mut r);
        let a: Vec<MelSpec> = (0..4).map(|_| rand_spec(&mut r, 10, 4)).collect();
        let b: Vec<MelSpec> = (0..4).map(|_| rand_spec(&mut r, 10, 4)).collect();
        let (ra, rb): (Vec<&MelSpec>, Vec<&MelSpec>) = (a.iter().collect(), b.iter().collect());
        let cfg = ObjectiveConfig::default();
        max_swap = max_swap.max((symmetric_loss(&s, &t, &ra, &rb, &cfg)? - symmetric_loss(&s, &t, &rb, &ra, &cfg)?).abs());
    }
    let pass = max_dev <= 1e-9 && in_bounds && max_scale <= 1e-9 && max_swap <= 1e-12;
    Ok((
        pass,
        format!("|L-(2-2cos)| max {max_dev:.1e} <= 1e-9, bounds [0,4] {in_bounds}, rescale drift {max_scale:.1e} <= 1e-9, swap drift {max_swap:.1e} <= 1e-12"),
    ))
}

fn c3_gradient_check() -> Outcome {
    const H: f64 = 1e-5;
    let mut r = rng::seeded(3);
    let (s, t) = tiny_pair(&mut r);
    let a: Vec<MelSpec> = (0..3).map(|_| rand_spec(&mut r, 10, 4)).collect();
    let b: Vec<MelSpec> = (0..3).map(|_| rand_spec(&mut r, 10, 4)).collect();
    let (ra, rb): (Vec<&MelSpec>, Vec<&MelSpec>) = (a.iter().collect(), b.iter().collect());
    let cfg = ObjectiveConfig::default();
    let out = loss_and_grads(&s, &t, &ra, &rb, &cfg, true)?;
    let analytic = out.grads.tensors();
    // Roundoff level of the central difference. Gradients below it (exact
    // zeros, e.g. shifts that the projector's batch norm removes) are
    // checked in absolute terms.
    let noise = 64.0 * f64::EPSILON * out.loss.abs().max(1.0) / H;
    let mut probe = s.clone();
    let (mut max_rel, mut max_zero, mut zeros, mut checked) = (0.0f64, 0.0f64, 0usize, 0usize);
    for ti in 0..analytic.len() {
        if !analytic[ti].kind.trainable() {
            continue;
        }
        for i in 0..analytic[ti].tensor.len() {
            let orig = probe.tensors()[ti].tensor.data()[i];
            probe.tensors_mut()[ti].tensor.data_mut()[i] = orig + H;
            let up = symmetric_loss(&probe, &t, &ra, &rb, &cfg)?;
            probe.tensors_mut()[ti].tensor.data_mut()[i] = orig - H;
            let down = symmetric_loss(&probe, &t, &ra, &rb, &cfg)?;
            probe.tensors_mut()[ti].tensor.data_mut()[i] = orig;
            let (g, n) = (analytic[ti].tensor.data()[i], (up - down) / (2.0 * H));
            let scale = g.abs().max(n.abs());
            if scale < noise {
                max_zero = max_zero.max((g - n).abs());
                zeros += 1;
            } else {
                max_rel = max_rel.max((g - n).abs() / scale);
            }
            checked += 1;
        }
    }
    let teacher_zero = out
        .teacher_grads
        .as_ref()
        .is_some_and(|tg| tg.tensors().iter().all(|n| n.tensor.data().iter().all(|&v| v == 0.0)));
    Ok((
        max_rel <= 1e-4 && max_zero <= noise && teacher_zero,
        format!(
            "{checked} student params, max rel err {max_rel:.2e} <= 1e-4, {zeros} zero grads within {max_zero:.1e} <= {noise:.1e}, teacher grads all zero {teacher_zero}"
        ),
    ))
}

fn flat<M: Module>(m: &M) -> Vec<f64> {
    m.tensors().iter().flat_map(|n| n.tensor.data().to_vec()).collect()
}

fn c4_ema() -> Outcome {
    let mut r = rng::seeded(4);
    let (s, t0) = tiny_pair(&mut r);
    let theta: Vec<f64> = flat(&s.encoder).into_iter().chain(flat(&s.projector)).collect();
    let phi = |t: &Teacher| -> Vec<f64> { flat(&t.encoder).into_iter().chain(flat(&t.projector)).collect() };

    let mut t = t0.clone();
    ema_update(&mut t, &s, 1.0, BufferUpdate::Ema)?;
    let fixed = phi(&t) == phi(&t0);
    let mut t = t0.clone();
    ema_update(&mut t, &s, 0.0, BufferUpdate::Ema)?;
    let copied = phi(&t) == theta;

    let dist = |v: &[f64]| v.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let start = phi(&t0);
    let d0 = dist(&start);
    let (mut norm_err, mut scalar_err) = (0.0f64, 0.0f64);
    for m in [0.5, 0.9, 0.99] {
        let mut t = t0.clone();
        for step in 1..=60 {
            ema_update(&mut t, &s, m, BufferUpdate::Ema)?;
            let now = phi(&t);
            let decay = f64::powi(m, step);
            norm_err = norm_err.max((dist(&now) - decay * d0).abs());
            for ((x, x0), th) in now.iter().zip(&start).zip(&theta) {
                scalar_err = scalar_err.max(((x - th) - decay * (x0 - th)).abs());
            }
        }
    }
    let pass = fixed && copied && norm_err <= 1e-12 && scalar_err <= 1e-12;
    Ok((pass, format!("m=1 fixed {fixed}, m=0 copy {copied}, |d_t - m^t d_0| max {norm_err:.1e} (tensor) {scalar_err:.1e} (scalar) <= 1e-12")))
}

fn c5_schedules() -> Outcome {
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for (name, cfg) in [("small", PretrainConfig::small()), ("base", PretrainConfig::base())] {
        let sched = cfg.schedules(10 * cfg.batch_size)?;
        let total = sched.lr.total_steps;
        let (first, last, mid) = (sched.at(0)?, sched.at(total)?, sched.at(total / 2)?);
        for (got, want) in [
            (last.lr, 1e-6),
            (first.wd, 0.04),
            (last.wd, 0.4),
            (first.m, cfg.m0),
            (last.m, 1.0),
            (mid.m, (1.0 + cfg.m0) / 2.0),
            (sched.lr.value(sched.lr.warmup_steps)?, cfg.peak_lr),
        ] {
            worst = worst.max((got - want).abs());
        }
        notes.push(format!("{name} m0={} total={total}", cfg.m0));
    }
    Ok((worst <= 1e-12, format!("max endpoint error {worst:.1e} <= 1e-12 ({})", notes.join(", "))))
}

fn c6_overlap() -> Outcome {
    let cfg = SegmentPairConfig::default();
    let hop = 0.01;
    let spec = MelSpec::new(Tensor::filled(1000, 1, 0.0), hop)?;
    let max_start = 1000 - cfg.segment_frames(hop);
    let mut min_enum = f64::INFINITY;
    for a in 0..=max_start {
        for b in 0..=max_start {
            min_enum = min_enum.min(segment_pair_at(&spec, &cfg, a, b)?.overlap_s);
        }
    }
    let mut r = rng::seeded(6);
    let mut min_mc = f64::INFINITY;
    for _ in 0..10_000 {
        min_mc = min_mc.min(sample_segment_pair(&spec, &cfg, &mut r)?.overlap_s);
    }
    let ex = MelExtractor::new(MelParams::default(), 16_000)?;
    let real = ex.compute(&WaveClip::new(vec![0.0; 160_000], 16_000)?)?;
    let mut min_real = f64::INFINITY;
    for _ in 0..10_000 {
        min_real = min_real.min(sample_segment_pair(&real, &cfg, &mut r)?.overlap_s);
    }
    let bound = cfg.min_overlap_s();
    let pass = (min_enum - 2.0).abs() <= hop + 1e-9 && min_mc >= bound - 1e-9 && min_real >= bound - 1e-9;
    Ok((
        pass,
        format!(
            "enumerated min {min_enum:.3} s = 2.0 +- {hop}, Monte-Carlo min {min_mc:.3} s >= {bound}, extracted {}-frame spectrogram min {min_real:.3} s",
            real.frames()
        ),
    ))
}

fn oracle_argmax(row: &[f64]) -> usize {
    let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.iter().position(|&v| v == top).unwrap()
}

fn oracle_ap(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| pos[i]).collect();
    if positives.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for &i in &positives {
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        sum += above.iter().filter(|&&j| pos[j]).count() as f64 / above.len() as f64;
    }
    Some(sum / positives.len() as f64)
}

fn random_scores(r: &mut Rng, n: usize, c: usize, ties: bool) -> Tensor {
    Tensor::from_vec(n, c, (0..n * c).map(|_| if ties { rng::uniform_int(r, 0, 3) as f64 } else { uniform(r, -1.0, 1.0) }).collect())
}

fn c7_metric_oracles() -> Outcome {
    let mut r = rng::seeded(7);
    let (mut acc_mismatch, mut map_err) = (0usize, 0.0f64);
    for k in 0..200 {
        let n = rng::uniform_int(&mut r, 1, 100) as usize;
        let c = rng::uniform_int(&mut r, 2, 10) as usize;
        let scores = random_scores(&mut r, n, c, k % 2 == 0);
        let labels: Vec<usize> = (0..n).map(|_| rng::uniform_int(&mut r, 0, c as i64 - 1) as usize).collect();
        let hits = (0..n).filter(|&i| oracle_argmax(scores.row(i)) == labels[i]).count();
        if accuracy(&scores, &labels)? != hits as f64 / n as f64 {
            acc_mismatch += 1;
        }
    }
    for k in 0..200 {
        let n = rng::uniform_int(&mut r, 1, 100) as usize;
        let c = rng::uniform_int(&mut r, 2, 10) as usize;
        let scores = random_scores(&mut r, n, c, k % 2 == 0);
        let mut targets = Tensor::from_vec(n, c, (0..n * c).map(|_| (uniform(&mut r, 0.0, 1.0) < 0.3) as u8 as f64).collect());
        if targets.data().iter().all(|&v| v == 0.0) {
            targets.data_mut()[0] = 1.0;
        }
        let aps: Vec<f64> = (0..c)
            .filter_map(|j| {
                let s: Vec<f64> = (0..n).map(|i| scores.get(i, j)).collect();
                let p: Vec<bool> = (0..n).map(|i| targets.get(i, j) == 1.0).collect();
                oracle_ap(&s, &p)
            })
            .collect();
        let want = aps.iter().sum::<f64>() / aps.len() as f64;
        map_err = map_err.max((mean_average_precision(&scores, &targets)? - want).abs());
    }
    Ok((acc_mismatch == 0 && map_err <= 1e-9, format!("accuracy mismatches {acc_mismatch}/200 (exact), mAP max error {map_err:.1e} <= 1e-9 over 200")))
}

fn c8_chunking() -> Outcome {
    let sr = 16_000u32;
    let ex = MelExtractor::new(MelParams::default(), sr)?;
    let min = min_samples_for_frames(&ex, EncoderConfig::small().stack_frames);
    let expected: [(f64, &[(f64, f64)]); 8] = [
        (3.0, &[(0.0, 3.0)]),
        (5.9, &[(0.0, 5.9)]),
        (6.0, &[(0.0, 6.0)]),
        (7.0, &[(0.0, 6.0), (6.0, 7.0)]),
        (11.9, &[(0.0, 6.0), (6.0, 11.9)]),
        (12.0, &[(0.0, 6.0), (6.0, 12.0)]),
        (13.0, &[(0.5, 6.5), (6.5, 12.5)]),
        (20.0, &[(4.0, 10.0), (10.0, 16.0)]),
    ];
    let mut bad = Vec::new();
    for (dur, want) in expected {
        let n = (dur * sr as f64).round() as usize;
        let got = plan_chunks(n, sr, &ChunkPolicy::default(), min)?;
        let want: Vec<_> = want.iter().map(|&(a, b)| ((a * sr as f64).round() as usize)..((b * sr as f64).round() as usize)).collect();
        if got != want {
            bad.push(format!("{dur} s: {got:?}"));
        }
    }
    Ok((bad.is_empty(), if bad.is_empty() { "all 8 durations match".into() } else { bad.join("; ") }))
}

/// Configuration of the desk-scale runs.
fn desk_config(segment_s: f64, collapse: bool) -> RunConfig {
    let mut o: Vec<String> = [
        "encoder.n_blocks=4",
        "encoder.n_heads=4",
        "encoder.dim=64",
        "encoder.inner_dim=256",
        "heads.hidden_dim=1024",
        "heads.out_dim=128",
        "views.memory_size=64",
        "schedules.epochs=50",
        "schedules.warmup_epochs=5",
        "data.batch_size=32",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.push(format!("views.segment_len_s={segment_s}"));
    if segment_s <= 5.0 {
        o.push("views.require_overlap=false".into());
    }
    if collapse {
        o.extend(["heads.use_predictor=false".into(), "schedules.m0=0".into(), "schedules.m_end=0".into()]);
    }
    RunConfig::load(None, &o).expect("desk config is valid")
}

struct Desk {
    task: Task,
    specs: Vec<MelSpec>,
    stats: GlobalStats,
}

fn desk_data() -> Desk {
    let spec = SynthSpec::modulation(300, 7);
    let clips = generate_corpus(&spec).expect("corpus");
    let split = |s: Split| match s {
        Split::Train => SplitName::Train,
        Split::Valid => SplitName::Valid,
        Split::Test => SplitName::Test,
    };
    let task = Task {
        name: "synthetic".into(),
        labels: Labels::Single(clips.iter().map(|c| c.class).collect()),
        n_classes: spec.classes.len(),
        folds: clips.iter().map(|c| Some(c.fold)).collect(),
        splits: clips.iter().map(|c| Some(split(c.split))).collect(),
        clips: clips.into_iter().map(|c| c.clip).collect(),
    };
    let cfg = desk_config(6.0, false);
    let ex = pipeline::extractor(&cfg).expect("extractor");
    let stats = pipeline::corpus_stats(&cfg, &task.clips).expect("stats");
    let specs = pipeline::spectrograms(&ex, &stats, &task.clips).expect("spectrograms");
    Desk { task, specs, stats }
}

struct DeskRun {
    probe: f64,
    state: TrainState,
}

fn desk_run(desk: &Desk, cfg: &RunConfig, label: &str) -> Result<DeskRun, Box<dyn std::error::Error>> {
    let t = Instant::now();
    let run = pipeline::pretrain(cfg, &desk.specs, &PretrainOptions { out_dir: None, resume: false, stop_at: None, verbose: false })?;
    let probe = pipeline::evaluate(cfg, &run.state.teacher.encoder, &desk.task, &desk.stats)?.value;
    println!("    {label}: probe accuracy {probe:.3}, final loss {:.4} ({:.0} s)", run.reports.last().map_or(f64::NAN, |r| r.loss), t.elapsed().as_secs_f64());
    Ok(DeskRun { probe, state: run.state })
}

/// Per-dimension std of the teacher's normalized embeddings over a fixed
/// batch of centered 6 s segments.
fn embedding_std(desk: &Desk, state: &TrainState) -> Result<f64, Box<dyn std::error::Error>> {
    let crops: Vec<MelSpec> = desk.specs.iter().take(64).map(|s| s.crop((s.frames() - 600) / 2, 600)).collect::<Result<_, _>>()?;
    let refs: Vec<&MelSpec> = crops.iter().collect();
    Ok(collapse_diagnostics(&state.teacher, &refs, NormMode::Eval)?.embed_std)
}

fn desk_scale(report: &mut Report) {
    let desk = desk_data();
    let main_cfg = desk_config(6.0, false);
    let control = pipeline::initial_encoder(&main_cfg, desk.specs.len())
        .and_then(|enc| pipeline::evaluate(&main_cfg, &enc, &desk.task, &desk.stats))
        .map(|r| r.value);
    let main = desk_run(&desk, &main_cfg, "two segments, 6 s");
    match (&control, &main) {
        (Ok(c), Ok(m)) => report.record(
            9,
            "desk-scale learning",
            Ok((m.probe >= 0.85 && m.probe - c >= 0.15, format!("probe {:.3} >= 0.85, random-init control {c:.3}, gain {:.3} >= 0.15", m.probe, m.probe - c))),
        ),
        (Err(e), _) => report.record(9, "desk-scale learning", Err(e.to_string().into())),
        (_, Err(e)) => report.record(9, "desk-scale learning", Err(e.to_string().into())),
    }
    let short = desk_run(&desk, &desk_config(1.0, false), "two segments, 1 s");
    let c10 = match (&main, short) {
        (Ok(m), Ok(s)) => Ok((m.probe >= s.probe - 0.02, format!("6 s {:.3} vs 1 s {:.3}, regression {:.3} <= 0.02", m.probe, s.probe, (s.probe - m.probe).max(0.0)))),
        (Err(e), _) => Err(e.to_string().into()),
        (_, Err(e)) => Err(e),
    };
    report.record(10, "segment-length ablation direction", c10);
    let collapsed = desk_run(&desk, &desk_config(6.0, true), "no predictor, m = 0");
    let c11 = match (&main, collapsed) {
        (Ok(m), Ok(c)) => (|| {
            let (normal, degenerate) = (embedding_std(&desk, &m.state)?, embedding_std(&desk, &c.state)?);
            let ratio = degenerate / normal;
            Ok((ratio < 0.1, format!("embedding std {degenerate:.2e} vs normal {normal:.2e}, ratio {ratio:.3} < 0.1")))
        })(),
        (Err(e), _) => Err(e.to_string().into()),
        (_, Err(e)) => Err(e),
    };
    report.record(11, "collapse contrast", c11);
}

fn c12_resume() -> Outcome {
    let cfg = RunConfig::load(
        None,
        &[
            "encoder.n_blocks=2",
            "encoder.n_heads=2",
            "encoder.dim=16",
            "encoder.inner_dim=32",
            "encoder.max_tokens=32",
            "heads.hidden_dim=32",
            "heads.out_dim=8",
            "views.segment_len_s=0.6",
            "views.clip_len_s=1.0",
            "views.memory_size=8",
            "schedules.epochs=5",
            "schedules.warmup_epochs=1",
            "data.batch_size=4",
            "data.seed=12",
        ]
        .map(String::from),
    )?;
    let clips: Vec<WaveClip> = generate_corpus(&SynthSpec { clip_len_s: 1.0, ..SynthSpec::tones(12, 12) })?.into_iter().map(|c| c.clip).collect();
    let ex = pipeline::extractor(&cfg)?;
    let stats = pipeline::corpus_stats(&cfg, &clips)?;
    let specs = pipeline::spectrograms(&ex, &stats, &clips)?;

    let mut full = TrainState::new(cfg.pretrain()?, specs.len())?;
    let mut reference = Vec::new();
    while !full.is_done() {
        reference.push(full.step_on(&specs)?.loss);
    }
    let cut = 7usize;
    let mut part = TrainState::new(cfg.pretrain()?, specs.len())?;
    for _ in 0..cut {
        part.step_on(&specs)?;
    }
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("resume.ckpt");
    checkpoint::save(&path, &part, &cfg)?;
    drop(part);
    let mut resumed = checkpoint::read(&path)?.restore(Some(&cfg.hash()))?;
    let mut after = Vec::new();
    for _ in 0..5 {
        after.push(resumed.step_on(&specs)?.loss);
    }
    let same = after.iter().zip(&reference[cut..cut + 5]).all(|(a, b)| a.to_bits() == b.to_bits());
    let same_params = resumed.student == {
        let mut s = TrainState::new(cfg.pretrain()?, specs.len())?;
        for _ in 0..cut + 5 {
            s.step_on(&specs)?;
        }
        s.student
    };
    Ok((same && same_params, format!("5 steps after resuming at step {cut}: losses bit-identical {same}, parameters bit-identical {same_params} (deterministic mode)")))
}

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, outcome: Outcome) {
        let (pass, detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        println!("criterion {id:>2} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` style arguments are accepted and ignored,
    // except `--list`, which must print nothing for this custom harness.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut report = Report { failed: Vec::new() };
    let t = Instant::now();
    report.record(1, "parameter counts", c1_param_counts());
    report.record(2, "loss geometry", c2_loss_geometry());
    report.record(3, "gradient check", c3_gradient_check());
    report.record(4, "EMA", c4_ema());
    report.record(5, "schedule endpoints", c5_schedules());
    report.record(6, "segment overlap", c6_overlap());
    report.record(7, "metric oracles", c7_metric_oracles());
    report.record(8, "chunking rule", c8_chunking());
    report.record(12, "checkpoint resume", c12_resume());
    desk_scale(&mut report);
    println!("acceptance: {} failed {:?} ({:.0} s)", report.failed.len(), report.failed, t.elapsed().as_secs_f64());
    if report.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
