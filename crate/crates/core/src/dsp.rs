//! Waveform to globally min-max normalized log-mel spectrogram.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

pub const TARGET_SAMPLE_RATE: u32 = 16_000;
/// Floor added to mel power before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl WaveClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            bail!(Input, "sample rate must be positive");
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            bail!(Input, "non-finite sample at index {i}");
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// The output has `round(n * target / source)` samples. Equal rates return
/// the input unchanged.
pub fn resample(clip: &WaveClip, target_rate: u32) -> Result<WaveClip> {
    if clip.is_empty() {
        bail!(Input, "cannot resample an empty clip");
    }
    if target_rate == 0 {
        bail!(Input, "target sample rate must be positive");
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    const ZERO_CROSSINGS: f64 = 24.0;
    let src = clip.sample_rate as f64;
    let dst = target_rate as f64;
    let ratio = src / dst;
    // Cutoff relative to the input Nyquist frequency, slightly below the
    // lower of the two Nyquist limits.
    let cutoff = 0.97 * (dst / src).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let n_in = clip.len();
    let n_out = libm::round(n_in as f64 / ratio) as usize;
    let x = &clip.samples;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let t = n as f64 * ratio;
        let lo = libm::ceil(t - half_width).max(0.0) as usize;
        let hi = (libm::floor(t + half_width) as i64).min(n_in as i64 - 1);
        let mut acc = 0.0;
        let mut k = lo as i64;
        while k <= hi {
            let dt = t - k as f64;
            acc += x[k as usize] * cutoff * sinc(cutoff * dt) * blackman(dt / half_width);
            k += 1;
        }
        out.push(acc);
    }
    WaveClip::new(out, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        libm::sin(px) / px
    }
}

/// Blackman window on `u` in `[-1, 1]`, zero outside.
fn blackman(u: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    let a = PI * (u + 1.0);
    0.42 - 0.5 * libm::cos(a) + 0.08 * libm::cos(2.0 * a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelParams {
    pub window_s: f64,
    pub hop_s: f64,
    pub n_bins: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub window_kind: WindowKind,
}

impl Default for MelParams {
    fn default() -> Self {
        Self { window_s: 0.025, hop_s: 0.010, n_bins: 64, f_min: 60.0, f_max: 7800.0, window_kind: WindowKind::Hamming }
    }
}

impl MelParams {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.window_s > 0.0 && self.hop_s > 0.0) {
            bail!(Config, "window and hop must be positive");
        }
        if self.hop_s > self.window_s {
            bail!(Config, "hop {} s exceeds window {} s", self.hop_s, self.window_s);
        }
        if self.n_bins == 0 {
            bail!(Config, "need at least one mel bin");
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            bail!(Config, "need 0 < f_min < f_max <= {nyquist} Hz, got {}..{}", self.f_min, self.f_max);
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        libm::round(self.window_s * sample_rate as f64) as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        libm::round(self.hop_s * sample_rate as f64) as usize
    }

    /// Frame count without padding: `1 + floor((n - window) / hop)`, or
    /// `None` if the signal is shorter than one window.
    pub fn frame_count(&self, n_samples: usize, sample_rate: u32) -> Option<usize> {
        let win = self.window_samples(sample_rate);
        let hop = self.hop_samples(sample_rate);
        (n_samples >= win && win > 0 && hop > 0).then(|| 1 + (n_samples - win) / hop)
    }

    /// Stable 64-bit digest of the parameters, used to tie statistics files
    /// to the front end that produced them.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let kind = match self.window_kind {
            WindowKind::Hamming => 1u64,
            WindowKind::Hann => 2,
        };
        for word in [
            self.window_s.to_bits(),
            self.hop_s.to_bits(),
            self.n_bins as u64,
            self.f_min.to_bits(),
            self.f_max.to_bits(),
            kind,
        ] {
            for b in word.to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}

/// Log-mel time-frequency matrix, `frames x bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec {
    pub values: Tensor,
    pub hop_s: f64,
}

impl MelSpec {
    pub fn new(values: Tensor, hop_s: f64) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            bail!(Input, "empty spectrogram");
        }
        if !values.all_finite() {
            bail!(Numerical, "spectrogram contains non-finite values");
        }
        Ok(Self { values, hop_s })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn bin_count(&self) -> usize {
        self.values.cols()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 * self.hop_s
    }

    /// Frames `start..start + len` as a new spectrogram.
    pub fn crop(&self, start: usize, len: usize) -> Result<MelSpec> {
        if len == 0 || start + len > self.frames() {
            bail!(Input, "crop {start}+{len} exceeds {} frames", self.frames());
        }
        Ok(MelSpec { values: self.values.slice_rows(start, start + len), hop_s: self.hop_s })
    }
}

/// In-place iterative radix-2 complex FFT with precomputed twiddles.
#[derive(Clone, Debug)]
pub struct Fft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    rev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            bail!(Config, "FFT size must be a power of two, got {n}");
        }
        let bits = n.trailing_zeros();
        let rev = (0..n).map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) }).collect();
        let half = n / 2;
        let cos = (0..half).map(|k| libm::cos(-2.0 * PI * k as f64 / n as f64)).collect();
        let sin = (0..half).map(|k| libm::sin(-2.0 * PI * k as f64 / n as f64)).collect();
        Ok(Self { n, cos, sin, rev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform `X[k] = sum x[n] e^{-2 pi i k n / N}`.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        assert!(re.len() == self.n && im.len() == self.n);
        for i in 0..self.n {
            let j = self.rev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.n {
            let half = size / 2;
            let step = self.n / size;
            for start in (0..self.n).step_by(size) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * step], self.sin[k * step]);
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            size *= 2;
        }
    }

    /// `|X[k]|^2` for `k = 0..=N/2` of a real frame (zero padded to `N`).
    pub fn power_spectrum(&self, frame: &[f64], out: &mut [f64]) {
        assert!(frame.len() <= self.n && out.len() == self.n / 2 + 1);
        let mut re = vec![0.0; self.n];
        let mut im = vec![0.0; self.n];
        re[..frame.len()].copy_from_slice(frame);
        self.forward(&mut re, &mut im);
        for (k, o) in out.iter_mut().enumerate() {
            *o = re[k] * re[k] + im[k] * im[k];
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * libm::log10(1.0 + f / 700.0)
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (libm::pow(10.0, m / 2595.0) - 1.0)
}

/// Triangular, area-normalized mel filters, `n_bins x (n_fft/2 + 1)`.
pub fn mel_filterbank(params: &MelParams, sample_rate: u32, n_fft: usize) -> Tensor {
    let n_freqs = n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(params.f_min), hz_to_mel(params.f_max));
    let edges: Vec<f64> = (0..params.n_bins + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (params.n_bins + 1) as f64))
        .collect();
    let mut fb = Tensor::zeros(params.n_bins, n_freqs);
    for b in 0..params.n_bins {
        let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        let norm = 2.0 / (hi - lo);
        for k in 0..n_freqs {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb.set(b, k, w * norm);
        }
    }
    fb
}

fn window(kind: WindowKind, n: usize) -> Vec<f64> {
    // Periodic windows.
    (0..n)
        .map(|i| {
            let c = libm::cos(2.0 * PI * i as f64 / n as f64);
            match kind {
                WindowKind::Hamming => 0.54 - 0.46 * c,
                WindowKind::Hann => 0.5 - 0.5 * c,
            }
        })
        .collect()
}

/// Reusable log-mel extractor for a fixed sample rate and parameter set.
#[derive(Clone, Debug)]
pub struct MelExtractor {
    params: MelParams,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Fft,
    filterbank: Tensor,
}

impl MelExtractor {
    pub fn new(params: MelParams, sample_rate: u32) -> Result<Self> {
        params.validate(sample_rate)?;
        let win = params.window_samples(sample_rate);
        let hop = params.hop_samples(sample_rate);
        if win == 0 || hop == 0 {
            bail!(Config, "window or hop rounds to zero samples at {sample_rate} Hz");
        }
        let n_fft = win.next_power_of_two();
        Ok(Self {
            params,
            sample_rate,
            window: window(params.window_kind, win),
            fft: Fft::new(n_fft)?,
            filterbank: mel_filterbank(&params, sample_rate, n_fft),
        })
    }

    pub fn params(&self) -> &MelParams {
        &self.params
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn compute(&self, clip: &WaveClip) -> Result<MelSpec> {
        if clip.sample_rate != self.sample_rate {
            bail!(Input, "clip is at {} Hz, extractor expects {} Hz", clip.sample_rate, self.sample_rate);
        }
        let frames = self.params.frame_count(clip.len(), self.sample_rate).ok_or_else(|| {
            Error::Input(alloc::format!(
                "clip of {} samples is shorter than one {}-sample window",
                clip.len(),
                self.window.len()
            ))
        })?;
        let hop = self.params.hop_samples(self.sample_rate);
        let win = self.window.len();
        let n_freqs = self.fft.len() / 2 + 1;
        let mut power = Tensor::zeros(frames, n_freqs);
        let mut frame = vec![0.0; win];
        for t in 0..frames {
            let seg = &clip.samples[t * hop..t * hop + win];
            for ((f, s), w) in frame.iter_mut().zip(seg).zip(&self.window) {
                *f = s * w;
            }
            self.fft.power_spectrum(&frame, power.row_mut(t));
        }
        let mut mel = Tensor::zeros(frames, self.params.n_bins);
        crate::tensor::gemm(1.0, power.view(), self.filterbank.view_t(), 0.0, mel.view_mut());
        mel.data_mut().iter_mut().for_each(|v| *v = libm::log(v.max(0.0) + LOG_FLOOR));
        MelSpec::new(mel, self.params.hop_s)
    }
}

/// One-shot log-mel computation; see [`MelExtractor`] for repeated use.
pub fn mel_spectrogram(clip: &WaveClip, params: &MelParams) -> Result<MelSpec> {
    MelExtractor::new(*params, clip.sample_rate)?.compute(clip)
}

/// Dataset-wide extremes of the log-mel values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalStats {
    pub min_val: f64,
    pub max_val: f64,
    pub n_frames_seen: u64,
}

impl GlobalStats {
    pub fn new(min_val: f64, max_val: f64, n_frames_seen: u64) -> Result<Self> {
        let s = Self { min_val, max_val, n_frames_seen };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_val.is_finite() && self.max_val.is_finite()) {
            bail!(Numerical, "statistics are not finite");
        }
        if self.min_val >= self.max_val {
            bail!(Numerical, "degenerate statistics: min {} >= max {}", self.min_val, self.max_val);
        }
        if self.n_frames_seen == 0 {
            bail!(Input, "statistics computed from zero frames");
        }
        Ok(())
    }
}

/// Streaming min/max reduction. Partial accumulators from parallel workers
/// combine with [`StatsAccumulator::merge`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StatsAccumulator {
    min_val: Option<f64>,
    max_val: Option<f64>,
    n_frames: u64,
}

impl StatsAccumulator {
    pub fn observe(&mut self, spec: &MelSpec) {
        if let Some((lo, hi)) = spec.values.min_max() {
            self.min_val = Some(self.min_val.map_or(lo, |m| m.min(lo)));
            self.max_val = Some(self.max_val.map_or(hi, |m| m.max(hi)));
            self.n_frames += spec.frames() as u64;
        }
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        if let Some(lo) = other.min_val {
            self.min_val = Some(self.min_val.map_or(lo, |m| m.min(lo)));
        }
        if let Some(hi) = other.max_val {
            self.max_val = Some(self.max_val.map_or(hi, |m| m.max(hi)));
        }
        self.n_frames += other.n_frames;
    }

    pub fn finish(&self) -> Result<GlobalStats> {
        match (self.min_val, self.max_val) {
            (Some(lo), Some(hi)) => GlobalStats::new(lo, hi, self.n_frames),
            _ => bail!(Input, "no clips observed"),
        }
    }
}

/// Min/max of the log-mel values over a stream of clips.
pub fn compute_global_stats<'a, I>(clips: I, params: &MelParams) -> Result<GlobalStats>
where
    I: IntoIterator<Item = &'a WaveClip>,
{
    let mut acc = StatsAccumulator::default();
    let mut extractor: Option<MelExtractor> = None;
    for clip in clips {
        if extractor.as_ref().is_none_or(|e| e.sample_rate != clip.sample_rate) {
            extractor = Some(MelExtractor::new(*params, clip.sample_rate)?);
        }
        acc.observe(&extractor.as_ref().unwrap().compute(clip)?);
    }
    acc.finish()
}

/// `(x - min) / (max - min)`. Values outside the fitted range are not clipped.
pub fn normalize(spec: &MelSpec, stats: &GlobalStats) -> Result<MelSpec> {
    stats.validate()?;
    let scale = 1.0 / (stats.max_val - stats.min_val);
    Ok(MelSpec { values: spec.values.map(|v| (v - stats.min_val) * scale), hop_s: spec.hop_s })
}

/// Inverse of [`normalize`].
pub fn denormalize(spec: &MelSpec, stats: &GlobalStats) -> Result<MelSpec> {
    stats.validate()?;
    let range = stats.max_val - stats.min_val;
    Ok(MelSpec { values: spec.values.map(|v| v * range + stats.min_val), hop_s: spec.hop_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn sine(freq: f64, sr: u32, n: usize) -> WaveClip {
        WaveClip::new((0..n).map(|i| 0.5 * libm::sin(2.0 * PI * freq * i as f64 / sr as f64)).collect(), sr).unwrap()
    }

    /// Brute-force DFT peak, independent of [`Fft`].
    fn dft_peak_bin(x: &[f64]) -> usize {
        let n = x.len();
        (1..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * libm::cos(a);
                    im += v * libm::sin(a);
                }
                (k, re * re + im * im)
            })
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    #[test]
    fn resample_identity_is_bit_identical() {
        let c = sine(440.0, 16_000, 1234);
        assert_eq!(resample(&c, 16_000).unwrap(), c);
    }

    #[test]
    fn resample_halves_length() {
        let c = WaveClip::new(vec![0.1; 96_000], 32_000).unwrap();
        let r = resample(&c, 16_000).unwrap();
        assert_eq!(r.len(), 48_000);
        assert_eq!(r.sample_rate, 16_000);
    }

    #[test]
    fn resample_preserves_tone_frequency() {
        let c = sine(440.0, 48_000, 48_000);
        let r = resample(&c, 16_000).unwrap();
        assert_eq!(r.len(), 16_000);
        // 2000-sample window in the middle: bin width 8 Hz, 440 Hz sits at bin 55.
        let mid = &r.samples[7000..9000];
        let peak = dft_peak_bin(mid);
        let expected = libm::round(440.0 * 2000.0 / 16_000.0) as i64;
        assert!((peak as i64 - expected).abs() <= 1, "peak bin {peak}, expected {expected}");
    }

    #[test]
    fn resample_rejects_empty() {
        assert!(resample(&WaveClip { samples: vec![], sample_rate: 8000 }, 16_000).is_err());
    }

    #[test]
    fn fft_matches_naive_dft() {
        let fft = Fft::new(64).unwrap();
        let mut r = rng::seeded(9);
        let x: Vec<f64> = (0..64).map(|_| rng::standard_normal(&mut r)).collect();
        let mut re = x.clone();
        let mut im = vec![0.0; 64];
        fft.forward(&mut re, &mut im);
        for k in 0..64 {
            let (mut sr, mut si) = (0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / 64.0;
                sr += v * libm::cos(a);
                si += v * libm::sin(a);
            }
            assert!((sr - re[k]).abs() < 1e-9 && (si - im[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn frame_counts_for_default_params() {
        let p = MelParams::default();
        let six = mel_spectrogram(&WaveClip::new(vec![0.01; 96_000], 16_000).unwrap(), &p).unwrap();
        assert_eq!(six.values.shape(), (598, 64));
        let one = mel_spectrogram(&WaveClip::new(vec![0.01; 16_000], 16_000).unwrap(), &p).unwrap();
        assert_eq!(one.frames(), 98);
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let spec = mel_spectrogram(&WaveClip::new(vec![0.0; 4000], 16_000).unwrap(), &MelParams::default()).unwrap();
        let floor = libm::log(LOG_FLOOR);
        assert!(spec.values.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_clip_is_an_input_error() {
        let err = mel_spectrogram(&WaveClip::new(vec![0.0; 399], 16_000).unwrap(), &MelParams::default());
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn tone_energy_lands_in_matching_mel_bin() {
        let p = MelParams::default();
        let spec = mel_spectrogram(&sine(1000.0, 16_000, 8000), &p).unwrap();
        let row = spec.values.row(10);
        let best = (0..64).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        let fb = mel_filterbank(&p, 16_000, 512);
        // Bin whose filter responds most to 1000 Hz (FFT bin 32).
        let want = (0..64).max_by(|&a, &b| fb.get(a, 32).partial_cmp(&fb.get(b, 32)).unwrap()).unwrap();
        assert!((best as i64 - want as i64).abs() <= 1);
    }

    #[test]
    fn mel_params_validation() {
        let mut p = MelParams::default();
        assert!(p.validate(16_000).is_ok());
        p.f_max = 9000.0;
        assert!(p.validate(16_000).is_err());
        let p = MelParams { hop_s: 0.05, ..MelParams::default() };
        assert!(p.validate(16_000).is_err());
    }

    #[test]
    fn stats_from_constructed_spectrogram() {
        let mut v = Tensor::filled(4, 3, 3.0);
        v.set(2, 1, 5.0);
        let mut acc = StatsAccumulator::default();
        acc.observe(&MelSpec::new(v, 0.01).unwrap());
        let s = acc.finish().unwrap();
        assert_eq!((s.min_val, s.max_val, s.n_frames_seen), (3.0, 5.0, 4));
    }

    #[test]
    fn stats_errors() {
        assert!(StatsAccumulator::default().finish().is_err());
        let mut acc = StatsAccumulator::default();
        acc.observe(&MelSpec::new(Tensor::filled(2, 2, 1.0), 0.01).unwrap());
        assert!(acc.finish().is_err());
        assert!(compute_global_stats(core::iter::empty(), &MelParams::default()).is_err());
    }

    #[test]
    fn stats_match_brute_force_over_random_clips() {
        let p = MelParams::default();
        let mut r = rng::seeded(11);
        let clips: Vec<WaveClip> = (0..100)
            .map(|_| {
                let n = rng::uniform_int(&mut r, 400, 2400) as usize;
                let amp = rng::uniform(&mut r, 0.01, 1.0);
                WaveClip::new((0..n).map(|_| amp * rng::standard_normal(&mut r)).collect(), 16_000).unwrap()
            })
            .collect();
        let stats = compute_global_stats(&clips, &p).unwrap();
        // Brute force: concatenate every spectrogram and scan.
        let mut all = Vec::new();
        let mut frames = 0u64;
        for c in &clips {
            let s = mel_spectrogram(c, &p).unwrap();
            frames += s.frames() as u64;
            all.extend_from_slice(s.values.data());
        }
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((stats.min_val, stats.max_val, stats.n_frames_seen), (lo, hi, frames));
        // Order independence.
        let rev: Vec<&WaveClip> = clips.iter().rev().collect();
        assert_eq!(compute_global_stats(rev, &p).unwrap(), stats);
    }

    #[test]
    fn stats_merge_equals_single_pass() {
        let p = MelParams::default();
        let ex = MelExtractor::new(p, 16_000).unwrap();
        let a = ex.compute(&sine(300.0, 16_000, 3000)).unwrap();
        let b = ex.compute(&sine(2000.0, 16_000, 5000)).unwrap();
        let mut whole = StatsAccumulator::default();
        whole.observe(&a);
        whole.observe(&b);
        let (mut left, mut right) = (StatsAccumulator::default(), StatsAccumulator::default());
        right.observe(&b);
        left.observe(&a);
        right.merge(&left);
        assert_eq!(whole.finish().unwrap(), right.finish().unwrap());
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let stats = GlobalStats::new(0.0, 2.0, 1).unwrap();
        let spec = MelSpec::new(Tensor::row_vector(vec![0.0, 1.0, 2.0, 3.0]), 0.01).unwrap();
        let n = normalize(&spec, &stats).unwrap();
        assert_eq!(n.values.data(), &[0.0, 0.5, 1.0, 1.5]);
        let bad = GlobalStats { min_val: 1.0, max_val: 1.0, n_frames_seen: 1 };
        assert!(normalize(&spec, &bad).is_err());
    }

    proptest! {
        #[test]
        fn frame_count_formula_holds(n in 400usize..40_000) {
            let p = MelParams::default();
            let clip = WaveClip::new(vec![0.0; n], 16_000).unwrap();
            let spec = mel_spectrogram(&clip, &p).unwrap();
            prop_assert_eq!(spec.frames(), 1 + (n - 400) / 160);
            prop_assert_eq!(spec.bin_count(), 64);
        }

        #[test]
        fn normalize_round_trip(lo in -30.0f64..0.0, width in 0.1f64..40.0, xs in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let stats = GlobalStats::new(lo, lo + width, 1).unwrap();
            let spec = MelSpec::new(Tensor::row_vector(xs.clone()), 0.01).unwrap();
            let back = denormalize(&normalize(&spec, &stats).unwrap(), &stats).unwrap();
            for (a, b) in back.values.data().iter().zip(&xs) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }

        #[test]
        fn normalize_is_affine(a in -10.0f64..10.0, b in -10.0f64..10.0, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            // n(alpha a + beta b) = alpha n(a) + beta n(b) + (alpha + beta - 1) * min / (max - min)
            let stats = GlobalStats::new(-4.0, 6.0, 1).unwrap();
            let n = |x: f64| normalize(&MelSpec::new(Tensor::row_vector(vec![x]), 0.01).unwrap(), &stats).unwrap().values.data()[0];
            let lhs = n(alpha * a + beta * b);
            let rhs = alpha * n(a) + beta * n(b) + (alpha + beta - 1.0) * stats.min_val / (stats.max_val - stats.min_val);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn mel_is_deterministic() {
        let c = sine(523.0, 16_000, 9000);
        let p = MelParams::default();
        assert_eq!(mel_spectrogram(&c, &p).unwrap(), mel_spectrogram(&c, &p).unwrap());
    }
}
