use segssl_core::dsp::{normalize, MelExtractor, MelParams, MelSpec, StatsAccumulator};
use segssl_core::encoder::{BlockPooling, EmbeddingMode, EncoderConfig};
use segssl_core::eval::{chunk_and_embed, select_linear_probe, ChunkPolicy, Labels};
use segssl_core::module::checksum;
use segssl_core::objective::HeadConfig;
use segssl_core::synth::{generate_corpus, Split, SynthSpec};
use segssl_core::train::{PretrainConfig, TrainState};
use segssl_core::views::{AugmentConfig, SegmentPairConfig};
use segssl_core::Tensor;

fn tiny(n_clips: usize) -> (SynthSpec, PretrainConfig) {
    let spec = SynthSpec { clip_len_s: 1.0, ..SynthSpec::tones(n_clips, 21) };
    let cfg = PretrainConfig {
        encoder: EncoderConfig { n_blocks: 1, n_heads: 2, dim: 16, inner_dim: 32, stack_frames: 4, input_bins: 64, max_tokens: 32, final_norm: true },
        head: HeadConfig { hidden_dim: 32, out_dim: 8 },
        pair: SegmentPairConfig { segment_len_s: 0.6, clip_len_s: 1.0, ..SegmentPairConfig::default() },
        augment: AugmentConfig { memory_size: 8, ..AugmentConfig::default() },
        epochs: 2,
        warmup_epochs: 1,
        batch_size: 5,
        seed: 4,
        ..PretrainConfig::small()
    };
    (spec, cfg)
}

#[test]
fn synthetic_corpus_trains_and_probes() {
    let (spec, cfg) = tiny(30);
    let corpus = generate_corpus(&spec).unwrap();
    let ex = MelExtractor::new(MelParams::default(), spec.sample_rate).unwrap();
    let mels: Vec<MelSpec> = corpus.iter().map(|c| ex.compute(&c.clip).unwrap()).collect();
    let mut acc = StatsAccumulator::default();
    mels.iter().for_each(|m| acc.observe(m));
    let stats = acc.finish().unwrap();
    let specs: Vec<MelSpec> = mels.iter().map(|m| normalize(m, &stats).unwrap()).collect();

    let mut state = TrainState::new(cfg, specs.len()).unwrap();
    let before = checksum(&state.teacher.encoder);
    let mut losses = Vec::new();
    while !state.is_done() {
        losses.push(state.step_on(&specs).unwrap().loss);
    }
    assert_eq!(losses.len(), 12);
    assert!(losses.iter().all(|l| l.is_finite() && (0.0..=4.0).contains(l)));
    assert_ne!(checksum(&state.teacher.encoder), before);

    let mode = EmbeddingMode::LinearEval(BlockPooling::PerBlock);
    let frozen = checksum(&state.teacher.encoder);
    let mut rows: [Vec<Vec<f64>>; 3] = Default::default();
    let mut labels: [Vec<usize>; 3] = Default::default();
    for c in &corpus {
        let e = chunk_and_embed(&c.clip, &ex, &stats, &state.teacher.encoder, mode, &ChunkPolicy::default()).unwrap();
        assert_eq!(e.vector.len(), mode.dim(&cfg.encoder));
        let k = match c.split {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        };
        rows[k].push(e.vector);
        labels[k].push(c.class);
    }
    let x = |k: usize| Tensor::from_rows(&rows[k].iter().map(Vec::as_slice).collect::<Vec<_>>());
    let sel = select_linear_probe(&x(0), &Labels::Single(labels[0].clone()), &x(1), &Labels::Single(labels[1].clone()), 3, &Default::default()).unwrap();
    let test = Labels::Single(labels[2].clone()).score(&sel.probe.scores(&x(2))).unwrap();
    assert!((0.0..=1.0).contains(&test));
    // Tones in disjoint bands are separable even by a barely trained encoder.
    assert!(test >= 0.8, "test accuracy {test}");
    assert_eq!(checksum(&state.teacher.encoder), frozen);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (spec, cfg) = tiny(10);
    let corpus = generate_corpus(&spec).unwrap();
    let ex = MelExtractor::new(MelParams::default(), spec.sample_rate).unwrap();
    let mels: Vec<MelSpec> = corpus.iter().map(|c| ex.compute(&c.clip).unwrap()).collect();
    let mut acc = StatsAccumulator::default();
    mels.iter().for_each(|m| acc.observe(m));
    let stats = acc.finish().unwrap();
    let specs: Vec<MelSpec> = mels.iter().map(|m| normalize(m, &stats).unwrap()).collect();
    let run = || {
        let mut s = TrainState::new(cfg, specs.len()).unwrap();
        let losses: Vec<u64> = (0..3).map(|_| s.step_on(&specs).unwrap().loss.to_bits()).collect();
        (losses, checksum(&s.student))
    };
    assert_eq!(run(), run());
}
