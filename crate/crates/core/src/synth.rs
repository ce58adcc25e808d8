//! Deterministic synthetic audio corpus.
//!
//! Each clip's randomness comes from `derive_seed(seed, [index])`, so clips
//! can be generated in any order or in parallel.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::dsp::WaveClip;
use crate::error::{bail, Result};
use crate::rng::{self, derive_seed, Rng};

pub const PEAK: f64 = 0.5;
/// Noise floor relative to the peak, in dB.
pub const NOISE_FLOOR_DB: f64 = -40.0;

/// A closed interval a per-clip parameter is drawn from uniformly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn draw(&self, r: &mut Rng) -> f64 {
        if self.hi > self.lo {
            rng::uniform(r, self.lo, self.hi)
        } else {
            self.lo
        }
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Class-conditional sound generators. Frequencies are in Hz, rates in Hz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Generator {
    PureTone { f0: Span },
    /// Exponential sweep from `f0` to `f1` over the whole clip.
    Chirp { f0: Span, f1: Span },
    NoiseBand { center: Span, width: Span },
    AmTone { f0: Span, rate: Span },
}

impl Generator {
    /// Nominal center frequency, used for ordering checks.
    pub fn nominal_hz(&self) -> f64 {
        let mid = |s: &Span| (s.lo + s.hi) / 2.0;
        match self {
            Generator::PureTone { f0 } | Generator::AmTone { f0, .. } => mid(f0),
            Generator::Chirp { f0, f1 } => libm::sqrt(mid(f0) * mid(f1)),
            Generator::NoiseBand { center, .. } => mid(center),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Generator::PureTone { .. } => "pure_tone",
            Generator::Chirp { .. } => "chirp",
            Generator::NoiseBand { .. } => "noise_band",
            Generator::AmTone { .. } => "am_tone",
        }
    }

    fn validate(&self, nyquist: f64) -> Result<()> {
        let spans: &[Span] = match self {
            Generator::PureTone { f0 } => &[*f0],
            Generator::Chirp { f0, f1 } => &[*f0, *f1],
            Generator::NoiseBand { center, width } => &[*center, *width],
            Generator::AmTone { f0, rate } => &[*f0, *rate],
        };
        for s in spans {
            if !s.valid() || s.lo <= 0.0 || s.hi >= nyquist {
                bail!(Config, "{} range [{}, {}] must lie inside (0, {nyquist})", self.name(), s.lo, s.hi);
            }
        }
        Ok(())
    }

    /// Unit-scale signal of `n` samples.
    fn render(&self, n: usize, sr: f64, r: &mut Rng) -> Vec<f64> {
        let phase0 = rng::uniform(r, 0.0, 2.0 * PI);
        match self {
            Generator::PureTone { f0 } => {
                let f = f0.draw(r);
                (0..n).map(|i| libm::sin(phase0 + 2.0 * PI * f * i as f64 / sr)).collect()
            }
            Generator::Chirp { f0, f1 } => {
                let (a, b) = (f0.draw(r), f1.draw(r));
                let dur = n as f64 / sr;
                let k = libm::log(b / a) / dur;
                (0..n)
                    .map(|i| {
                        let t = i as f64 / sr;
                        let phase = if k.abs() < 1e-12 { 2.0 * PI * a * t } else { 2.0 * PI * a * libm::expm1(k * t) / k };
                        libm::sin(phase0 + phase)
                    })
                    .collect()
            }
            Generator::AmTone { f0, rate } => {
                let (f, m) = (f0.draw(r), rate.draw(r));
                let mphase = rng::uniform(r, 0.0, 2.0 * PI);
                (0..n)
                    .map(|i| {
                        let t = i as f64 / sr;
                        0.5 * (1.0 + libm::sin(mphase + 2.0 * PI * m * t)) * libm::sin(phase0 + 2.0 * PI * f * t)
                    })
                    .collect()
            }
            Generator::NoiseBand { center, width } => {
                let (c, w) = (center.draw(r), width.draw(r));
                // Sum of random-phase sinusoids spread over the band.
                let lo = (c - w / 2.0).max(1.0);
                let hi = (c + w / 2.0).min(sr / 2.0 - 1.0);
                let parts: Vec<(f64, f64)> = (0..48).map(|_| (rng::uniform(r, lo, hi), rng::uniform(r, 0.0, 2.0 * PI))).collect();
                (0..n)
                    .map(|i| {
                        let t = i as f64 / sr;
                        parts.iter().map(|(f, p)| libm::sin(p + 2.0 * PI * f * t)).sum::<f64>()
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_clips: usize,
    pub clip_len_s: f64,
    pub sample_rate: u32,
    pub classes: Vec<Generator>,
    pub n_folds: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Three pitch classes with disjoint ranges.
    pub fn tones(n_clips: usize, seed: u64) -> Self {
        Self {
            n_clips,
            clip_len_s: 10.0,
            sample_rate: 16_000,
            classes: alloc::vec![
                Generator::PureTone { f0: Span::new(200.0, 400.0) },
                Generator::PureTone { f0: Span::new(800.0, 1600.0) },
                Generator::PureTone { f0: Span::new(2500.0, 5000.0) },
            ],
            n_folds: 5,
            seed,
        }
    }

    /// Three amplitude-modulation rate bands over one shared carrier range:
    /// the classes have the same long-term spectrum and differ only in
    /// temporal structure.
    pub fn modulation(n_clips: usize, seed: u64) -> Self {
        let carrier = Span::new(500.0, 3000.0);
        Self {
            classes: alloc::vec![
                Generator::AmTone { f0: carrier, rate: Span::new(1.0, 1.5) },
                Generator::AmTone { f0: carrier, rate: Span::new(3.0, 4.5) },
                Generator::AmTone { f0: carrier, rate: Span::new(8.0, 12.0) },
            ],
            ..Self::tones(n_clips, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            bail!(Config, "a corpus needs at least 2 classes, got {}", self.classes.len());
        }
        if self.n_clips == 0 || self.n_folds == 0 {
            bail!(Config, "n_clips and n_folds must be positive");
        }
        if !(self.clip_len_s > 0.0) || self.sample_rate == 0 {
            bail!(Config, "clip length and sample rate must be positive");
        }
        self.classes.iter().try_for_each(|g| g.validate(self.sample_rate as f64 / 2.0))
    }

    /// Class, fold and split of clip `index`. Classes go round-robin; folds
    /// and splits cycle over each class's own clips so both stay balanced.
    pub fn assignment(&self, index: usize) -> (usize, usize, Split) {
        let k = self.classes.len();
        let rank = index / k;
        let split = match rank % 5 {
            0..=2 => Split::Train,
            3 => Split::Valid,
            _ => Split::Test,
        };
        (index % k, rank % self.n_folds, split)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub index: usize,
    pub class: usize,
    pub fold: usize,
    pub split: Split,
    pub clip: WaveClip,
}

/// Generates clip `index`: the class signal peak-normalized to [`PEAK`] plus
/// white noise at [`NOISE_FLOOR_DB`] below the peak.
pub fn generate_clip(spec: &SynthSpec, index: usize) -> Result<SynthClip> {
    spec.validate()?;
    if index >= spec.n_clips {
        bail!(Input, "clip index {index} out of range for {} clips", spec.n_clips);
    }
    let (class, fold, split) = spec.assignment(index);
    let mut r = rng::seeded(derive_seed(spec.seed, &[index as u64]));
    let sr = spec.sample_rate as f64;
    let n = libm::round(spec.clip_len_s * sr) as usize;
    let mut x = spec.classes[class].render(n, sr, &mut r);
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { PEAK / peak } else { 0.0 };
    let noise = PEAK * libm::pow(10.0, NOISE_FLOOR_DB / 20.0);
    for v in x.iter_mut() {
        *v = *v * gain + noise * rng::standard_normal(&mut r);
    }
    Ok(SynthClip { index, class, fold, split, clip: WaveClip::new(x, spec.sample_rate)? })
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<SynthClip>> {
    (0..spec.n_clips).map(|i| generate_clip(spec, i)).collect()
}
