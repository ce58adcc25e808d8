//! Transformer encoder over stacked log-mel frames.
//!
//! Consecutive frames are stacked into patches, projected to the model
//! width, prefixed with a class token, offset by a learned positional table
//! and passed through pre-norm transformer blocks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::MelSpec;
use crate::error::{bail, Result};
use crate::module::{join, Module, Named, ParamKind};
use crate::nn::{gelu, gelu_grad, softmax_rows, LayerNorm, LayerNormCache, Linear};
use crate::rng::{self, Rng};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub n_heads: usize,
    pub dim: usize,
    pub inner_dim: usize,
    pub stack_frames: usize,
    pub input_bins: usize,
    pub max_tokens: usize,
    /// Apply a final layer norm to the block outputs.
    pub final_norm: bool,
}

impl EncoderConfig {
    pub fn small() -> Self {
        Self { n_blocks: 12, n_heads: 6, dim: 384, inner_dim: 1536, stack_frames: 4, input_bins: 64, max_tokens: 150, final_norm: true }
    }

    pub fn base() -> Self {
        Self { n_heads: 12, dim: 768, inner_dim: 3072, ..Self::small() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_blocks", self.n_blocks),
            ("n_heads", self.n_heads),
            ("dim", self.dim),
            ("stack_frames", self.stack_frames),
            ("input_bins", self.input_bins),
            ("max_tokens", self.max_tokens),
        ];
        for (name, v) in positive {
            if v == 0 {
                bail!(Config, "{name} must be at least 1");
            }
        }
        if self.dim % self.n_heads != 0 {
            bail!(Config, "dim {} is not divisible by n_heads {}", self.dim, self.n_heads);
        }
        if self.inner_dim < self.dim {
            bail!(Config, "inner_dim {} is smaller than dim {}", self.inner_dim, self.dim);
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.stack_frames * self.input_bins
    }

    /// Tokens produced from `frames` spectrogram frames (class token excluded).
    pub fn token_count(&self, frames: usize) -> usize {
        frames / self.stack_frames
    }
}

/// Number of learnable encoder parameters, in closed form.
pub fn param_count(cfg: &EncoderConfig) -> usize {
    let d = cfg.dim;
    let i = cfg.inner_dim;
    let patch = cfg.patch_dim() * d + d;
    let tokens = d + (cfg.max_tokens + 1) * d;
    let block = 2 * (2 * d) + (3 * d * d + 3 * d) + (d * d + d) + (d * i + i) + (i * d + d);
    let norm = if cfg.final_norm { 2 * d } else { 0 };
    patch + tokens + cfg.n_blocks * block + norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    fn new(cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let d = cfg.dim;
        Self {
            ln1: LayerNorm::new(d),
            qkv: Linear::init_trunc_normal(d, 3 * d, rng),
            proj: Linear::init_trunc_normal(d, d, rng),
            ln2: LayerNorm::new(d),
            fc1: Linear::init_trunc_normal(d, cfg.inner_dim, rng),
            fc2: Linear::init_trunc_normal(cfg.inner_dim, d, rng),
        }
    }
}

impl Module for Block {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>) {
        self.ln1.visit(&join(prefix, "ln1"), out);
        self.qkv.visit(&join(prefix, "qkv"), out);
        self.proj.visit(&join(prefix, "proj"), out);
        self.ln2.visit(&join(prefix, "ln2"), out);
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>) {
        self.ln1.visit_mut(&join(prefix, "ln1"), out);
        self.qkv.visit_mut(&join(prefix, "qkv"), out);
        self.proj.visit_mut(&join(prefix, "proj"), out);
        self.ln2.visit_mut(&join(prefix, "ln2"), out);
        self.fc1.visit_mut(&join(prefix, "fc1"), out);
        self.fc2.visit_mut(&join(prefix, "fc2"), out);
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    ln1: LayerNormCache,
    h1: Tensor,
    qkv: Tensor,
    attn: Vec<Tensor>,
    attn_out: Tensor,
    ln2: LayerNormCache,
    h2: Tensor,
    u: Tensor,
    g: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub patch: Linear,
    pub cls: Tensor,
    pub pos: Tensor,
    pub blocks: Vec<Block>,
    pub norm: Option<LayerNorm>,
}

/// Encoder output for one segment. Row 0 is the class token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    /// Output of every block (final norm applied), when requested.
    pub per_block: Option<Vec<Tensor>>,
}

/// Encoder output for a batch of equal-length segments, stored as one
/// `(batch * seq) x dim` matrix per depth.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    pub batch: usize,
    pub seq: usize,
    pub tokens: Tensor,
    pub per_block: Option<Vec<Tensor>>,
}

impl EncodedBatch {
    /// Class-token rows, `batch x dim`.
    pub fn cls(&self) -> Tensor {
        let d = self.tokens.cols();
        let mut out = Tensor::zeros(self.batch, d);
        for b in 0..self.batch {
            out.row_mut(b).copy_from_slice(self.tokens.row(b * self.seq));
        }
        out
    }

    pub fn sequence(&self, b: usize) -> TokenSequence {
        let range = |t: &Tensor| t.slice_rows(b * self.seq, (b + 1) * self.seq);
        TokenSequence {
            tokens: range(&self.tokens),
            per_block: self.per_block.as_ref().map(|v| v.iter().map(range).collect()),
        }
    }

    pub fn into_sequences(self) -> Vec<TokenSequence> {
        (0..self.batch).map(|b| self.sequence(b)).collect()
    }
}

/// State kept by [`Encoder::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    batch: usize,
    seq: usize,
    stacked: Tensor,
    blocks: Vec<BlockCache>,
    norm: Option<LayerNormCache>,
}

/// Concatenates groups of `stack` consecutive frames; trailing frames that do
/// not fill a group are dropped. Returns `T x (stack * bins)`.
pub fn frame_stack(spec: &MelSpec, stack: usize) -> Result<Tensor> {
    let frames = spec.frames();
    if stack == 0 || frames < stack {
        bail!(Input, "{frames} frames cannot fill a stack of {stack}");
    }
    let t = frames / stack;
    let width = stack * spec.bin_count();
    Ok(Tensor::from_vec(t, width, spec.values.data()[..t * width].to_vec()))
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let patch = Linear::init_trunc_normal(cfg.patch_dim(), d, rng);
        let mut cls = Tensor::zeros(1, d);
        cls.data_mut().iter_mut().for_each(|v| *v = rng::truncated_normal(rng, 0.02));
        let mut pos = Tensor::zeros(cfg.max_tokens + 1, d);
        pos.data_mut().iter_mut().for_each(|v| *v = rng::truncated_normal(rng, 0.02));
        let blocks = (0..cfg.n_blocks).map(|_| Block::new(&cfg, rng)).collect();
        let norm = cfg.final_norm.then(|| LayerNorm::new(d));
        Ok(Self { cfg, patch, cls, pos, blocks, norm })
    }

    fn check_batch(&self, specs: &[&MelSpec]) -> Result<usize> {
        let Some(first) = specs.first() else {
            bail!(Input, "empty batch");
        };
        let t = self.cfg.token_count(first.frames());
        for s in specs {
            if s.bin_count() != self.cfg.input_bins {
                bail!(Shape, "spectrogram has {} bins, encoder expects {}", s.bin_count(), self.cfg.input_bins);
            }
            if s.frames() < self.cfg.stack_frames {
                bail!(Input, "{} frames cannot fill a stack of {}", s.frames(), self.cfg.stack_frames);
            }
            if self.cfg.token_count(s.frames()) != t {
                bail!(Shape, "batch mixes segments of {} and {} tokens", t, self.cfg.token_count(s.frames()));
            }
        }
        if t > self.cfg.max_tokens {
            bail!(Input, "{t} tokens exceed the positional table ({} tokens)", self.cfg.max_tokens);
        }
        Ok(t)
    }

    /// Encodes a batch of segments with equal token counts.
    pub fn forward(&self, specs: &[&MelSpec], keep_per_block: bool) -> Result<(EncodedBatch, EncoderCache)> {
        let t = self.check_batch(specs)?;
        let (batch, seq, d) = (specs.len(), t + 1, self.cfg.dim);
        let width = self.cfg.patch_dim();
        let mut stacked = Tensor::zeros(batch * t, width);
        for (b, s) in specs.iter().enumerate() {
            stacked.data_mut()[b * t * width..(b + 1) * t * width].copy_from_slice(&s.values.data()[..t * width]);
        }
        let emb = self.patch.forward(&stacked);
        let mut x = Tensor::zeros(batch * seq, d);
        for b in 0..batch {
            for r in 0..seq {
                let src = if r == 0 { self.cls.row(0) } else { emb.row(b * t + r - 1) };
                let p = self.pos.row(r);
                for ((o, s), pv) in x.row_mut(b * seq + r).iter_mut().zip(src).zip(p) {
                    *o = s + pv;
                }
            }
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut per_block = keep_per_block.then(|| Vec::with_capacity(self.blocks.len()));
        for (i, block) in self.blocks.iter().enumerate() {
            let (y, cache) = self.block_forward(block, &x, batch, seq);
            caches.push(cache);
            x = y;
            if let Some(pb) = per_block.as_mut() {
                if i + 1 < self.blocks.len() {
                    pb.push(match &self.norm {
                        Some(n) => n.forward(&x).0,
                        None => x.clone(),
                    });
                }
            }
        }
        let (tokens, norm_cache) = match &self.norm {
            Some(n) => {
                let (y, c) = n.forward(&x);
                (y, Some(c))
            }
            None => (x, None),
        };
        if let Some(pb) = per_block.as_mut() {
            pb.push(tokens.clone());
        }
        let out = EncodedBatch { batch, seq, tokens, per_block };
        Ok((out, EncoderCache { batch, seq, stacked, blocks: caches, norm: norm_cache }))
    }

    /// Encodes one segment.
    pub fn encode(&self, spec: &MelSpec, keep_per_block: bool) -> Result<TokenSequence> {
        let (out, _) = self.forward(&[spec], keep_per_block)?;
        Ok(out.sequence(0))
    }

    fn block_forward(&self, blk: &Block, x: &Tensor, batch: usize, seq: usize) -> (Tensor, BlockCache) {
        let d = self.cfg.dim;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / libm::sqrt(dh as f64);
        let (h1, ln1) = blk.ln1.forward(x);
        let qkv = blk.qkv.forward(&h1);
        let mut attn = Vec::with_capacity(batch * self.cfg.n_heads);
        let mut attn_out = Tensor::zeros(x.rows(), d);
        for b in 0..batch {
            let rows = qkv.view().rows_range(b * seq, seq);
            for h in 0..self.cfg.n_heads {
                let q = rows.cols_range(h * dh, dh);
                let k = rows.cols_range(d + h * dh, dh);
                let v = rows.cols_range(2 * d + h * dh, dh);
                let mut a = Tensor::zeros(seq, seq);
                gemm(scale, q, k.t(), 0.0, a.view_mut());
                softmax_rows(&mut a);
                gemm(1.0, a.view(), v, 0.0, attn_out.view_mut().rows_range(b * seq, seq).cols_range(h * dh, dh));
                attn.push(a);
            }
        }
        let mut x2 = blk.proj.forward(&attn_out);
        x2.add_scaled(x, 1.0);
        let (h2, ln2) = blk.ln2.forward(&x2);
        let u = blk.fc1.forward(&h2);
        let g = u.map(gelu);
        let mut y = blk.fc2.forward(&g);
        y.add_scaled(&x2, 1.0);
        (y, BlockCache { ln1, h1, qkv, attn, attn_out, ln2, h2, u, g })
    }

    fn block_backward(&self, blk: &Block, c: &BlockCache, dy: &Tensor, grad: &mut Block, batch: usize, seq: usize) -> Tensor {
        let d = self.cfg.dim;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut dg = blk.fc2.backward(&c.g, dy, &mut grad.fc2);
        for (v, u) in dg.data_mut().iter_mut().zip(c.u.data()) {
            *v *= gelu_grad(*u);
        }
        let dh2 = blk.fc1.backward(&c.h2, &dg, &mut grad.fc1);
        let mut dx2 = blk.ln2.backward(&c.ln2, &dh2, &mut grad.ln2);
        dx2.add_scaled(dy, 1.0);
        let d_attn_out = blk.proj.backward(&c.attn_out, &dx2, &mut grad.proj);
        let mut dqkv = Tensor::zeros(c.qkv.rows(), 3 * d);
        let mut da = Tensor::zeros(seq, seq);
        for b in 0..batch {
            let rows = c.qkv.view().rows_range(b * seq, seq);
            let dout_rows = d_attn_out.view().rows_range(b * seq, seq);
            for h in 0..self.cfg.n_heads {
                let a = &c.attn[b * self.cfg.n_heads + h];
                let q = rows.cols_range(h * dh, dh);
                let k = rows.cols_range(d + h * dh, dh);
                let v = rows.cols_range(2 * d + h * dh, dh);
                let dout = dout_rows.cols_range(h * dh, dh);
                gemm(1.0, dout, v.t(), 0.0, da.view_mut());
                gemm(1.0, a.view_t(), dout, 0.0, dqkv.view_mut().rows_range(b * seq, seq).cols_range(2 * d + h * dh, dh));
                for i in 0..seq {
                    let ar = a.row(i);
                    let dr = da.row_mut(i);
                    let dot: f64 = ar.iter().zip(dr.iter()).map(|(x, y)| x * y).sum();
                    for (dv, av) in dr.iter_mut().zip(ar) {
                        *dv = av * (*dv - dot) * scale;
                    }
                }
                gemm(1.0, da.view(), k, 0.0, dqkv.view_mut().rows_range(b * seq, seq).cols_range(h * dh, dh));
                gemm(1.0, da.view_t(), q, 0.0, dqkv.view_mut().rows_range(b * seq, seq).cols_range(d + h * dh, dh));
            }
        }
        let dh1 = blk.qkv.backward(&c.h1, &dqkv, &mut grad.qkv);
        let mut dx = blk.ln1.backward(&c.ln1, &dh1, &mut grad.ln1);
        dx.add_scaled(&dx2, 1.0);
        dx
    }

    /// Accumulates into `grad` the parameter gradients given the gradient of
    /// a loss with respect to the final `tokens` of the forward pass.
    pub fn backward(&self, cache: &EncoderCache, d_tokens: &Tensor, grad: &mut Encoder) -> Result<()> {
        let (batch, seq) = (cache.batch, cache.seq);
        if d_tokens.shape() != (batch * seq, self.cfg.dim) {
            bail!(Shape, "token gradient {:?}, expected {:?}", d_tokens.shape(), (batch * seq, self.cfg.dim));
        }
        let mut dx = match (&self.norm, &cache.norm, grad.norm.as_mut()) {
            (Some(n), Some(c), Some(gn)) => n.backward(c, d_tokens, gn),
            (None, None, None) => d_tokens.clone(),
            _ => bail!(Shape, "final norm presence differs between encoder, cache and gradient"),
        };
        for ((blk, c), g) in self.blocks.iter().zip(&cache.blocks).zip(grad.blocks.iter_mut()).rev() {
            dx = self.block_backward(blk, c, &dx, g, batch, seq);
        }
        let t = seq - 1;
        let mut demb = Tensor::zeros(batch * t, self.cfg.dim);
        for b in 0..batch {
            for r in 0..seq {
                let src = dx.row(b * seq + r);
                for (p, s) in grad.pos.row_mut(r).iter_mut().zip(src) {
                    *p += s;
                }
                if r == 0 {
                    for (p, s) in grad.cls.row_mut(0).iter_mut().zip(src) {
                        *p += s;
                    }
                } else {
                    demb.row_mut(b * t + r - 1).copy_from_slice(src);
                }
            }
        }
        self.patch.backward_params(&cache.stacked, &demb, &mut grad.patch);
        Ok(())
    }
}

impl Module for Encoder {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>) {
        self.patch.visit(&join(prefix, "patch"), out);
        out.push(Named { name: join(prefix, "cls"), kind: ParamKind::Token, tensor: &self.cls });
        out.push(Named { name: join(prefix, "pos"), kind: ParamKind::Token, tensor: &self.pos });
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), out);
        }
        if let Some(n) = &self.norm {
            n.visit(&join(prefix, "norm"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>) {
        self.patch.visit_mut(&join(prefix, "patch"), out);
        out.push(Named { name: join(prefix, "cls"), kind: ParamKind::Token, tensor: &mut self.cls });
        out.push(Named { name: join(prefix, "pos"), kind: ParamKind::Token, tensor: &mut self.pos });
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
        if let Some(n) = &mut self.norm {
            n.visit_mut(&join(prefix, "norm"), out);
        }
    }
}

/// How block outputs are pooled for linear evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockPooling {
    /// One time-average per block, concatenated: `d * n_blocks`.
    PerBlock,
    /// A single average over all blocks and tokens: `d`.
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Final class token.
    Pretrain,
    /// Final class token plus pooled block outputs.
    LinearEval(BlockPooling),
    /// Final class token plus the time-average of the last block.
    Finetune,
}

impl EmbeddingMode {
    pub fn dim(&self, cfg: &EncoderConfig) -> usize {
        match self {
            EmbeddingMode::Pretrain => cfg.dim,
            EmbeddingMode::LinearEval(BlockPooling::PerBlock) => cfg.dim * (cfg.n_blocks + 1),
            EmbeddingMode::LinearEval(BlockPooling::Joint) | EmbeddingMode::Finetune => 2 * cfg.dim,
        }
    }

    pub fn needs_per_block(&self) -> bool {
        matches!(self, EmbeddingMode::LinearEval(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentEmbedding {
    pub vector: Vec<f64>,
    pub mode: EmbeddingMode,
}

fn token_mean(t: &Tensor, out: &mut [f64]) {
    let n = (t.rows() - 1) as f64;
    for r in 1..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
}

pub fn extract_embedding(seq: &TokenSequence, mode: EmbeddingMode) -> Result<SegmentEmbedding> {
    let d = seq.tokens.cols();
    if seq.tokens.rows() < 2 {
        bail!(Shape, "token sequence has no tokens besides the class token");
    }
    let mut vector = seq.tokens.row(0).to_vec();
    match mode {
        EmbeddingMode::Pretrain => {}
        EmbeddingMode::Finetune => {
            let mut m = vec![0.0; d];
            token_mean(&seq.tokens, &mut m);
            vector.extend_from_slice(&m);
        }
        EmbeddingMode::LinearEval(pooling) => {
            let Some(blocks) = seq.per_block.as_ref().filter(|b| !b.is_empty()) else {
                bail!(Input, "linear-eval embedding needs per-block outputs");
            };
            match pooling {
                BlockPooling::PerBlock => {
                    for b in blocks {
                        let mut m = vec![0.0; d];
                        token_mean(b, &mut m);
                        vector.extend_from_slice(&m);
                    }
                }
                BlockPooling::Joint => {
                    let mut m = vec![0.0; d];
                    for b in blocks {
                        token_mean(b, &mut m);
                    }
                    m.iter_mut().for_each(|v| *v /= blocks.len() as f64);
                    vector.extend_from_slice(&m);
                }
            }
        }
    }
    Ok(SegmentEmbedding { vector, mode })
}
