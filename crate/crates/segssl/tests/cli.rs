use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use segssl::config::RunConfig;
use segssl::manifest::Manifest;
use segssl::metrics::read_metrics;
use segssl::stats::StatsFile;
use segssl::wav::read_wav;
use segssl_core::dsp::MelExtractor;

const TINY: &str = r#"{
  "views": {"segment_len_s": 0.6, "clip_len_s": 1.0, "memory_size": 8},
  "encoder": {"n_blocks": 2, "n_heads": 2, "dim": 16, "inner_dim": 32, "max_tokens": 32},
  "heads": {"hidden_dim": 32, "out_dim": 8},
  "schedules": {"epochs": 4, "warmup_epochs": 1},
  "data": {"batch_size": 4, "seed": 3, "checkpoint_every": 2},
  "eval": {"epochs": 5, "batch_size": 8, "lr_grid": [0.01, 0.1]}
}"#;

fn segssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segssl")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = segssl(args);
    assert!(out.status.success(), "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    manifest: PathBuf,
    stats: PathBuf,
}

fn fixture(n_clips: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.json");
    fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    let n = n_clips.to_string();
    ok(&["make-synthetic", "--out-dir", s(&data), "--n-clips", &n, "--clip-len-s", "1", "--seed", "9", "--n-folds", "2", "--preset", "tones"]);
    let manifest = data.join("manifest.jsonl");
    let stats = root.join("stats.json");
    ok(&["compute-stats", "--config", s(&config), "--manifest", s(&manifest), "--out", s(&stats)]);
    Fixture { _dir: dir, root, config, manifest, stats }
}

#[test]
fn synthetic_corpus_is_reproducible_and_echoes_args() {
    let f = fixture(6);
    let again = f.root.join("again");
    ok(&["make-synthetic", "--out-dir", s(&again), "--n-clips", "6", "--clip-len-s", "1", "--seed", "9", "--n-folds", "2", "--preset", "tones"]);
    let data = f.manifest.parent().unwrap();
    for i in 0..6 {
        let name = format!("clip_{i:05}.wav");
        assert_eq!(fs::read(data.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap());
    }
    let m = Manifest::load(&f.manifest).unwrap();
    let args = m.header.as_ref().unwrap()["args"].as_array().unwrap();
    assert!(args.iter().any(|a| a == "--seed") && args.iter().any(|a| a == "9"));
    assert_eq!(m.n_classes().unwrap(), 3);
}

#[test]
fn stats_match_brute_force_and_are_deterministic() {
    let f = fixture(10);
    let again = f.root.join("stats2.json");
    ok(&["compute-stats", "--config", s(&f.config), "--manifest", s(&f.manifest), "--out", s(&again)]);
    assert_eq!(fs::read(&f.stats).unwrap(), fs::read(&again).unwrap());
    let file = StatsFile::load(&f.stats).unwrap();
    let m = Manifest::load(&f.manifest).unwrap();
    let ex = MelExtractor::new(Default::default(), 16_000).unwrap();
    let (mut lo, mut hi, mut frames) = (f64::INFINITY, f64::NEG_INFINITY, 0u64);
    for r in &m.records {
        let spec = ex.compute(&read_wav(&m.resolve(r)).unwrap()).unwrap();
        for v in spec.values.data() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        frames += spec.frames() as u64;
    }
    assert_eq!((file.min_val, file.max_val, file.n_frames_seen), (lo, hi, frames));
    assert_eq!(file.config_hash, RunConfig::load(Some(&f.config), &[]).unwrap().hash());
}

#[test]
fn missing_inputs_and_bad_config_exit_with_usage_code() {
    let f = fixture(4);
    let out = segssl(&["compute-stats", "--manifest", "/nonexistent/m.jsonl", "--out", s(&f.root.join("x.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    let bad = f.root.join("bad.json");
    fs::write(&bad, r#"{"data": {"batch": 4}}"#).unwrap();
    let run_dir = f.root.join("run");
    let out = segssl(&["pretrain", "--config", s(&bad), "--manifest", s(&f.manifest), "--stats", s(&f.stats), "--out-dir", s(&run_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!run_dir.exists(), "no work may start before the config validates");
    assert_eq!(segssl(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn pretrain_smoke_resume_and_eval() {
    let f = fixture(8);
    let full = f.root.join("full");
    let c = s(&f.config);
    let common = |dir: &Path| -> Vec<String> {
        ["pretrain", "--config", c, "--manifest", s(&f.manifest), "--stats", s(&f.stats), "--out-dir", s(dir), "--quiet"]
            .iter()
            .map(|x| x.to_string())
            .collect()
    };
    let args: Vec<String> = common(&full);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let ck = full.join("checkpoint.ckpt");
    assert!(ck.exists());
    let full_log = read_metrics(&full.join("metrics.jsonl")).unwrap();
    assert_eq!(full_log.len(), 8);

    let part = f.root.join("part");
    let mut a = common(&part);
    a.extend(["--max-steps".into(), "3".into()]);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let mut b = common(&part);
    b.push("--resume".into());
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    let resumed = read_metrics(&part.join("metrics.jsonl")).unwrap();
    assert_eq!(resumed.len(), full_log.len());
    for (x, y) in resumed.iter().zip(&full_log) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits(), "step {}", x.step);
    }
    assert_eq!(fs::read(&ck).unwrap(), fs::read(part.join("checkpoint.ckpt")).unwrap());

    let before = fs::read(&ck).unwrap();
    let res = f.root.join("res.json");
    ok(&["eval", "--checkpoint", s(&ck), "--manifest", s(&f.manifest), "--stats", s(&f.stats), "--out", s(&res), "--set", "eval.folds=2"]);
    assert_eq!(fs::read(&ck).unwrap(), before);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&res).unwrap()).unwrap();
    assert_eq!(v["per_fold"].as_array().unwrap().len(), 2);
    assert_eq!(v["metric_name"], "accuracy");
    let mean = (v["per_fold"][0]["value"].as_f64().unwrap() + v["per_fold"][1]["value"].as_f64().unwrap()) / 2.0;
    assert!((v["value"].as_f64().unwrap() - mean).abs() < 1e-12);

    let other = f.root.join("other.json");
    fs::write(&other, TINY.replace("\"seed\": 3", "\"seed\": 4")).unwrap();
    let mut c2 = common(&part);
    c2[2] = s(&other).to_string();
    c2.push("--resume".into());
    let out = segssl(&c2.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2), "resuming under a different config must be refused");
}

#[test]
fn sweep_writes_one_row_per_length() {
    let f = fixture(15);
    let out_dir = f.root.join("sweep");
    let out = ok(&["sweep-segment-length", "--config", s(&f.config), "--manifest", s(&f.manifest), "--lengths", "0.6", "--out-dir", s(&out_dir), "--quiet", "--set", "schedules.epochs=1", "--set", "schedules.warmup_epochs=0"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("normalization is undefined"));
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 2);
    assert!(out_dir.join("sweep.svg").exists());
    ok(&["sweep-segment-length", "--config", s(&f.config), "--manifest", s(&f.manifest), "--lengths", "0.3,0.6", "--out-dir", s(&out_dir), "--quiet", "--set", "schedules.epochs=1", "--set", "schedules.warmup_epochs=0"]);
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
}
