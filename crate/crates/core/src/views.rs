//! Positive-pair creation: two segments cropped from one clip's spectrogram,
//! each independently augmented with memory-bank Mixup and random resized
//! crop.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::dsp::MelSpec;
use crate::error::{bail, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Frames lost at the end of a clip to the analysis window (no padding is
/// applied before framing). A segment may exceed the available frame count
/// by up to this many frames, in which case it is clamped to the whole
/// spectrogram.
pub const EDGE_FRAMES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentPairConfig {
    pub segment_len_s: f64,
    pub use_two_segments: bool,
    pub clip_len_s: f64,
    /// Reject configurations whose two segments are not guaranteed to overlap.
    pub require_overlap: bool,
}

impl Default for SegmentPairConfig {
    fn default() -> Self {
        Self { segment_len_s: 6.0, use_two_segments: true, clip_len_s: 10.0, require_overlap: true }
    }
}

impl SegmentPairConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_len_s > 0.0 && self.segment_len_s <= self.clip_len_s) {
            bail!(Config, "need 0 < segment_len_s <= clip_len_s, got {} and {}", self.segment_len_s, self.clip_len_s);
        }
        if self.use_two_segments && self.require_overlap && self.segment_len_s <= self.clip_len_s / 2.0 {
            bail!(
                Config,
                "segments of {} s in {} s clips are not guaranteed to overlap",
                self.segment_len_s,
                self.clip_len_s
            );
        }
        Ok(())
    }

    /// Guaranteed overlap between the two segments, `2 * segment - clip`.
    pub fn min_overlap_s(&self) -> f64 {
        2.0 * self.segment_len_s - self.clip_len_s
    }

    pub fn segment_frames(&self, hop_s: f64) -> usize {
        libm::round(self.segment_len_s / hop_s) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Upper bound of the Mixup ratio; the ratio is drawn from `U(0, alpha)`.
    pub mixup_alpha: f64,
    pub memory_size: usize,
    pub rrc_freq_scale: (f64, f64),
    pub rrc_time_scale: (f64, f64),
    /// Apply Mixup before RRC (otherwise after).
    pub mixup_first: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mixup_alpha: 0.4,
            memory_size: 2048,
            rrc_freq_scale: (0.6, 1.5),
            rrc_time_scale: (0.6, 1.5),
            mixup_first: true,
        }
    }
}

impl AugmentConfig {
    /// Mixup off and RRC pinned to the identity crop.
    pub fn identity() -> Self {
        Self { mixup_alpha: 0.0, memory_size: 1, rrc_freq_scale: (1.0, 1.0), rrc_time_scale: (1.0, 1.0), mixup_first: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mixup_alpha) {
            bail!(Config, "mixup_alpha must lie in [0, 1], got {}", self.mixup_alpha);
        }
        if self.memory_size == 0 {
            bail!(Config, "memory_size must be at least 1");
        }
        for (name, (lo, hi)) in [("rrc_freq_scale", self.rrc_freq_scale), ("rrc_time_scale", self.rrc_time_scale)] {
            if !(lo > 0.0 && lo <= hi) {
                bail!(Config, "{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})");
            }
        }
        Ok(())
    }
}

/// FIFO of recent segments used as Mixup partners.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    buffer: VecDeque<Tensor>,
    capacity: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        Self { buffer: VecDeque::with_capacity(capacity.min(4096)), capacity: capacity.max(1) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, seg: Tensor) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(seg);
    }

    pub fn get(&self, i: usize) -> Option<&Tensor> {
        self.buffer.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.buffer.iter()
    }
}

/// Two crops of one spectrogram and their overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPair {
    pub first: MelSpec,
    pub second: MelSpec,
    pub starts: (usize, usize),
    pub overlap_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub x: MelSpec,
    pub x_prime: MelSpec,
    pub overlap_s: f64,
}

/// Segment length in frames for `spec`, and the largest valid start offset.
pub fn offset_range(spec: &MelSpec, cfg: &SegmentPairConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    let want = cfg.segment_frames(spec.hop_s);
    let frames = spec.frames();
    if want == 0 {
        bail!(Config, "segment of {} s is shorter than one frame", cfg.segment_len_s);
    }
    let seg = if want <= frames {
        want
    } else if want - frames <= EDGE_FRAMES {
        frames
    } else {
        bail!(Input, "spectrogram of {frames} frames is shorter than a {want}-frame segment");
    };
    Ok((seg, frames - seg))
}

/// The pair cropped at the given frame offsets.
pub fn segment_pair_at(spec: &MelSpec, cfg: &SegmentPairConfig, a: usize, b: usize) -> Result<SegmentPair> {
    let (seg, max_start) = offset_range(spec, cfg)?;
    if a > max_start || b > max_start {
        bail!(Input, "offsets ({a}, {b}) exceed the valid range 0..={max_start}");
    }
    let first = spec.crop(a, seg)?;
    let second = if a == b { first.clone() } else { spec.crop(b, seg)? };
    let shift = a.abs_diff(b) as f64 * spec.hop_s;
    Ok(SegmentPair { first, second, starts: (a, b), overlap_s: (cfg.segment_len_s - shift).max(0.0) })
}

/// Draws two independent, uniformly placed segment offsets (one shared
/// offset in single-segment mode).
pub fn sample_segment_pair(spec: &MelSpec, cfg: &SegmentPairConfig, rng: &mut Rng) -> Result<SegmentPair> {
    let (_, max_start) = offset_range(spec, cfg)?;
    let a = rng::uniform_int(rng, 0, max_start as i64) as usize;
    let b = if cfg.use_two_segments { rng::uniform_int(rng, 0, max_start as i64) as usize } else { a };
    segment_pair_at(spec, cfg, a, b)
}

/// Mixes two log-mel matrices in the linear amplitude domain:
/// `log((1 - lambda) exp(x) + lambda exp(k))`, evaluated as
/// `x + log1p(lambda (exp(k - x) - 1))` so that `lambda = 0` and `k = x`
/// return `x` exactly.
pub fn mix_log_domain(x: &Tensor, partner: &Tensor, lambda: f64) -> Result<Tensor> {
    if x.shape() != partner.shape() {
        bail!(Shape, "mixup partner {:?} vs segment {:?}", partner.shape(), x.shape());
    }
    let mut out = x.clone();
    for (o, k) in out.data_mut().iter_mut().zip(partner.data()) {
        *o += libm::log1p(lambda * libm::expm1(k - *o));
    }
    Ok(out)
}

/// Mixup against a random past segment from `bank`; `seg` is pushed into the
/// bank afterwards. Bank entries whose shape differs from `seg` are never
/// chosen; with no eligible partner the segment is returned unchanged.
pub fn mixup_augment(seg: &MelSpec, bank: &mut MemoryBank, alpha: f64, rng: &mut Rng) -> Result<MelSpec> {
    if !(0.0..=1.0).contains(&alpha) {
        bail!(Config, "mixup alpha must lie in [0, 1], got {alpha}");
    }
    let lambda = rng::uniform(rng, 0.0, alpha);
    let eligible: Vec<usize> =
        bank.iter().enumerate().filter(|(_, t)| t.shape() == seg.values.shape()).map(|(i, _)| i).collect();
    let out = if eligible.is_empty() || lambda == 0.0 {
        seg.clone()
    } else {
        let pick = eligible[rng::uniform_int(rng, 0, eligible.len() as i64 - 1) as usize];
        let partner = bank.get(pick).expect("index from enumeration");
        MelSpec { values: mix_log_domain(&seg.values, partner, lambda)?, hop_s: seg.hop_s }
    };
    bank.push(seg.values.clone());
    Ok(out)
}

/// A crop window in (fractional) frame and bin coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropBox {
    pub time_offset: i64,
    pub time_len: usize,
    pub freq_offset: i64,
    pub freq_len: usize,
}

/// Resizes the crop `bx` of `x` back to `x`'s shape with bilinear
/// interpolation (half-pixel centers). Coordinates outside `x` replicate the
/// nearest edge.
pub fn resized_crop(x: &Tensor, bx: &CropBox) -> Tensor {
    let (rows, cols) = x.shape();
    let mut out = Tensor::zeros(rows, cols);
    let row_scale = bx.time_len as f64 / rows as f64;
    let col_scale = bx.freq_len as f64 / cols as f64;
    let col_coords: Vec<(usize, usize, f64)> =
        (0..cols).map(|j| interp_coord(bx.freq_offset as f64 + (j as f64 + 0.5) * col_scale - 0.5, cols)).collect();
    for i in 0..rows {
        let (r0, r1, fr) = interp_coord(bx.time_offset as f64 + (i as f64 + 0.5) * row_scale - 0.5, rows);
        let (row0, row1) = (x.row(r0), x.row(r1));
        for (o, &(c0, c1, fc)) in out.row_mut(i).iter_mut().zip(&col_coords) {
            let top = if fc == 0.0 { row0[c0] } else { row0[c0] * (1.0 - fc) + row0[c1] * fc };
            let bottom = if fc == 0.0 { row1[c0] } else { row1[c0] * (1.0 - fc) + row1[c1] * fc };
            *o = if fr == 0.0 { top } else { top * (1.0 - fr) + bottom * fr };
        }
    }
    out
}

fn interp_coord(pos: f64, n: usize) -> (usize, usize, f64) {
    let p = pos.clamp(0.0, (n - 1) as f64);
    let i0 = libm::floor(p) as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, p - i0 as f64)
}

/// Draws a crop box: independent frequency and time scale factors from the
/// configured ranges and a uniformly random integer position. Crops larger
/// than the input extend past its edges.
pub fn sample_crop_box(rows: usize, cols: usize, cfg: &AugmentConfig, rng: &mut Rng) -> CropBox {
    let fs = rng::uniform(rng, cfg.rrc_freq_scale.0, cfg.rrc_freq_scale.1);
    let ts = rng::uniform(rng, cfg.rrc_time_scale.0, cfg.rrc_time_scale.1);
    let freq_len = (libm::round(fs * cols as f64) as usize).max(1);
    let time_len = (libm::round(ts * rows as f64) as usize).max(1);
    let place = |rng: &mut Rng, n: usize, len: usize| {
        let slack = n as i64 - len as i64;
        rng::uniform_int(rng, slack.min(0), slack.max(0))
    };
    let time_offset = place(rng, rows, time_len);
    let freq_offset = place(rng, cols, freq_len);
    CropBox { time_offset, time_len, freq_offset, freq_len }
}

/// Random resized crop; output shape equals input shape.
pub fn rrc_augment(seg: &MelSpec, cfg: &AugmentConfig, rng: &mut Rng) -> Result<MelSpec> {
    if seg.values.is_empty() {
        bail!(Input, "empty segment");
    }
    let bx = sample_crop_box(seg.frames(), seg.bin_count(), cfg, rng);
    Ok(MelSpec { values: resized_crop(&seg.values, &bx), hop_s: seg.hop_s })
}

fn augment(seg: &MelSpec, aug: &AugmentConfig, bank: &mut MemoryBank, rng: &mut Rng) -> Result<MelSpec> {
    if aug.mixup_first {
        let mixed = mixup_augment(seg, bank, aug.mixup_alpha, rng)?;
        rrc_augment(&mixed, aug, rng)
    } else {
        let cropped = rrc_augment(seg, aug, rng)?;
        mixup_augment(&cropped, bank, aug.mixup_alpha, rng)
    }
}

/// Samples a segment pair and augments each segment independently.
pub fn create_views(
    spec: &MelSpec,
    pair_cfg: &SegmentPairConfig,
    aug_cfg: &AugmentConfig,
    bank: &mut MemoryBank,
    rng: &mut Rng,
) -> Result<ViewPair> {
    aug_cfg.validate()?;
    let pair = sample_segment_pair(spec, pair_cfg, rng)?;
    let x = augment(&pair.first, aug_cfg, bank, rng)?;
    let x_prime = augment(&pair.second, aug_cfg, bank, rng)?;
    Ok(ViewPair { x, x_prime, overlap_s: pair.overlap_s })
}
