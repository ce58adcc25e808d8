//! Projector/predictor heads, the symmetric normalized-MSE objective and the
//! EMA teacher.

use alloc::vec::Vec;

use crate::dsp::MelSpec;
use crate::encoder::{Encoder, EncoderCache, EncoderConfig};
use crate::error::{bail, Result};
use crate::module::{check_same_layout, join, Module, Named, ParamKind};
use crate::nn::{BatchNorm, BatchNormCache, BatchStats, Linear, NormMode, BATCH_NORM_MOMENTUM};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadConfig {
    pub hidden_dim: usize,
    pub out_dim: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { hidden_dim: 4096, out_dim: 256 }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.out_dim == 0 {
            bail!(Config, "head dimensions must be at least 1, got {:?}", self);
        }
        Ok(())
    }
}

/// Linear, batch norm, ReLU, linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub fc1: Linear,
    pub bn: BatchNorm,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    x: Tensor,
    mode: NormMode,
    bn: BatchNormCache,
    act: Tensor,
}

impl Head {
    pub fn new(in_dim: usize, cfg: &HeadConfig, rng: &mut Rng) -> Self {
        Self {
            fc1: Linear::init_uniform(in_dim, cfg.hidden_dim, rng),
            bn: BatchNorm::new(cfg.hidden_dim),
            fc2: Linear::init_uniform(cfg.hidden_dim, cfg.out_dim, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.fc1.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.fc2.out_dim()
    }

    pub fn forward(&self, x: &Tensor, mode: NormMode) -> Result<(Tensor, HeadCache, Option<BatchStats>)> {
        if x.cols() != self.in_dim() {
            bail!(Shape, "head input has {} columns, expected {}", x.cols(), self.in_dim());
        }
        let a = self.fc1.forward(x);
        let (b, bn, stats) = self.bn.forward(&a, mode)?;
        let act = b.map(|v| v.max(0.0));
        let y = self.fc2.forward(&act);
        Ok((y, HeadCache { x: x.clone(), mode, bn, act }, stats))
    }

    pub fn backward(&self, cache: &HeadCache, dy: &Tensor, grad: &mut Head) -> Tensor {
        let mut dact = self.fc2.backward(&cache.act, dy, &mut grad.fc2);
        for (d, a) in dact.data_mut().iter_mut().zip(cache.act.data()) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let da = self.bn.backward(&cache.bn, &dact, cache.mode, &mut grad.bn);
        self.fc1.backward(&cache.x, &da, &mut grad.fc1)
    }
}

impl Module for Head {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>) {
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.bn.visit(&join(prefix, "bn"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>) {
        self.fc1.visit_mut(&join(prefix, "fc1"), out);
        self.bn.visit_mut(&join(prefix, "bn"), out);
        self.fc2.visit_mut(&join(prefix, "fc2"), out);
    }
}

/// Encoder, projector and predictor. A missing predictor acts as the
/// identity map.
#[derive(Clone, Debug, PartialEq)]
pub struct Student {
    pub encoder: Encoder,
    pub projector: Head,
    pub predictor: Option<Head>,
}

impl Student {
    pub fn new(enc: EncoderConfig, head: HeadConfig, with_predictor: bool, rng: &mut Rng) -> Result<Self> {
        head.validate()?;
        let encoder = Encoder::new(enc, rng)?;
        let projector = Head::new(enc.dim, &head, rng);
        let predictor = with_predictor.then(|| Head::new(head.out_dim, &head, rng));
        Ok(Self { encoder, projector, predictor })
    }

    /// Folds batch statistics gathered during a loss evaluation into the
    /// running estimates.
    pub fn update_running(&mut self, stats: &[HeadStats]) {
        for s in stats {
            self.projector.bn.update_running(&s.projector, BATCH_NORM_MOMENTUM);
            if let (Some(p), Some(ps)) = (self.predictor.as_mut(), s.predictor.as_ref()) {
                p.bn.update_running(ps, BATCH_NORM_MOMENTUM);
            }
        }
    }
}

impl Module for Student {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.projector.visit(&join(prefix, "projector"), out);
        if let Some(p) = &self.predictor {
            p.visit(&join(prefix, "predictor"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>) {
        self.encoder.visit_mut(&join(prefix, "encoder"), out);
        self.projector.visit_mut(&join(prefix, "projector"), out);
        if let Some(p) = &mut self.predictor {
            p.visit_mut(&join(prefix, "predictor"), out);
        }
    }
}

/// Encoder and projector, updated only by [`ema_update`].
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub encoder: Encoder,
    pub projector: Head,
}

impl Module for Teacher {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.projector.visit(&join(prefix, "projector"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>) {
        self.encoder.visit_mut(&join(prefix, "encoder"), out);
        self.projector.visit_mut(&join(prefix, "projector"), out);
    }
}

pub fn init_teacher(student: &Student) -> Teacher {
    Teacher { encoder: student.encoder.clone(), projector: student.projector.clone() }
}

/// How the teacher's batch-norm running statistics follow the student.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BufferUpdate {
    /// Same moving average as the weights.
    Ema,
    CopyStudent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectiveConfig {
    /// Batch-norm mode of the teacher projector.
    pub teacher_mode: NormMode,
    pub buffer_update: BufferUpdate,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { teacher_mode: NormMode::Eval, buffer_update: BufferUpdate::Ema }
    }
}

/// `phi <- m phi + (1 - m) theta` over the teacher's encoder and projector.
pub fn ema_update(teacher: &mut Teacher, student: &Student, m: f64, buffers: BufferUpdate) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        bail!(Config, "EMA decay must lie in [0, 1], got {m}");
    }
    ema_into(&mut teacher.encoder, &student.encoder, m, buffers)?;
    ema_into(&mut teacher.projector, &student.projector, m, buffers)
}

fn ema_into<M: Module>(dst: &mut M, src: &M, m: f64, buffers: BufferUpdate) -> Result<()> {
    check_same_layout(dst, src)?;
    for (d, s) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        let copy = m == 0.0 || (d.kind == ParamKind::Buffer && buffers == BufferUpdate::CopyStudent);
        // The increment form keeps m = 1 and phi = theta exact fixed points.
        for (x, y) in d.tensor.data_mut().iter_mut().zip(s.tensor.data()) {
            *x = if copy { *y } else { *x + (1.0 - m) * (y - *x) };
        }
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// `|| p/|p| - z/|z| ||^2`, in `[0, 4]`.
pub fn normalized_mse(p: &[f64], z: &[f64]) -> Result<f64> {
    if p.len() != z.len() {
        bail!(Shape, "vectors of length {} and {}", p.len(), z.len());
    }
    let (np, nz) = (norm(p), norm(z));
    if np == 0.0 || nz == 0.0 {
        bail!(Numerical, "normalized MSE of a zero vector");
    }
    Ok(p.iter().zip(z).map(|(a, b)| (a / np - b / nz) * (a / np - b / nz)).sum())
}

/// Loss and gradient with respect to `p`; `z` is a constant.
fn normalized_mse_grad(p: &[f64], z: &[f64], dp: &mut [f64], scale: f64) -> Result<f64> {
    let loss = normalized_mse(p, z)?;
    let (np, nz) = (norm(p), norm(z));
    let cos: f64 = p.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / (np * nz);
    for ((g, a), b) in dp.iter_mut().zip(p).zip(z) {
        *g = -2.0 * scale * (b / nz - cos * a / np) / np;
    }
    Ok(loss)
}

/// Batch statistics from one training-mode pass through the student heads.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadStats {
    pub projector: BatchStats,
    pub predictor: Option<BatchStats>,
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Batch mean of the two symmetric terms.
    pub loss: f64,
    pub grads: Student,
    /// Statistics of the two student passes (views `x`, then `x_prime`).
    pub stats: Vec<HeadStats>,
    /// Teacher projections of `x` then `x_prime`, `2B x out`.
    pub teacher_proj: Tensor,
    /// Student class-token embeddings of `x` then `x_prime`, `2B x d`.
    pub student_embed: Tensor,
    /// Gradient reaching the teacher, when requested. It is identically zero.
    pub teacher_grads: Option<Teacher>,
}

struct StudentPass {
    proj_cache: HeadCache,
    pred_cache: Option<HeadCache>,
    p: Tensor,
    stats: HeadStats,
}

fn student_heads(s: &Student, h: &Tensor) -> Result<StudentPass> {
    let (z, proj_cache, ps) = s.projector.forward(h, NormMode::Train)?;
    let (p, pred_cache, qs) = match &s.predictor {
        Some(q) => {
            let (p, c, st) = q.forward(&z, NormMode::Train)?;
            (p, Some(c), st)
        }
        None => (z, None, None),
    };
    let stats = HeadStats { projector: ps.expect("train mode yields stats"), predictor: qs };
    Ok(StudentPass { proj_cache, pred_cache, p, stats })
}

fn rows(t: &Tensor, start: usize, n: usize) -> Tensor {
    t.slice_rows(start, start + n)
}

fn stack_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::from_vec(a.rows() + b.rows(), a.cols(), data)
}

fn place_cls(dh: &Tensor, batch: usize, seq: usize) -> Tensor {
    let mut d = Tensor::zeros(batch * seq, dh.cols());
    for b in 0..batch {
        d.row_mut(b * seq).copy_from_slice(dh.row(b));
    }
    d
}

struct TeacherPass {
    z: Tensor,
    enc_cache: EncoderCache,
    caches: [HeadCache; 2],
    seq: usize,
}

fn teacher_forward(t: &Teacher, specs: &[&MelSpec], batch: usize, mode: NormMode) -> Result<TeacherPass> {
    let (out, enc_cache) = t.encoder.forward(specs, false)?;
    let h = out.cls();
    let (z1, c1, _) = t.projector.forward(&rows(&h, 0, batch), mode)?;
    let (z2, c2, _) = t.projector.forward(&rows(&h, batch, batch), mode)?;
    Ok(TeacherPass { z: stack_rows(&z1, &z2), enc_cache, caches: [c1, c2], seq: out.seq })
}

/// Symmetric loss over a batch of view pairs `(x[i], x_prime[i])` and its
/// gradient with respect to the student. The teacher is evaluated without
/// gradient; with `check_teacher_grad` its backward pass is also run from the
/// detached (zero) upstream gradient, for verification.
pub fn loss_and_grads(
    student: &Student,
    teacher: &Teacher,
    x: &[&MelSpec],
    x_prime: &[&MelSpec],
    cfg: &ObjectiveConfig,
    check_teacher_grad: bool,
) -> Result<LossOutput> {
    let batch = x.len();
    if batch != x_prime.len() {
        bail!(Shape, "{} views paired with {}", batch, x_prime.len());
    }
    if batch < 2 {
        bail!(Input, "batch normalization needs at least 2 pairs, got {batch}");
    }
    let all: Vec<&MelSpec> = x.iter().chain(x_prime).copied().collect();
    let (s_out, s_cache) = student.encoder.forward(&all, false)?;
    let h = s_out.cls();
    let pass = [student_heads(student, &rows(&h, 0, batch))?, student_heads(student, &rows(&h, batch, batch))?];
    let tp = teacher_forward(teacher, &all, batch, cfg.teacher_mode)?;

    let out_dim = student.projector.out_dim();
    let scale = 1.0 / batch as f64;
    let mut dp = [Tensor::zeros(batch, out_dim), Tensor::zeros(batch, out_dim)];
    let mut loss = 0.0;
    for i in 0..batch {
        // Student on x_prime predicts teacher on x, and vice versa.
        loss += normalized_mse_grad(pass[1].p.row(i), tp.z.row(i), dp[1].row_mut(i), scale)?;
        loss += normalized_mse_grad(pass[0].p.row(i), tp.z.row(batch + i), dp[0].row_mut(i), scale)?;
    }
    loss *= scale;
    if !loss.is_finite() {
        bail!(Numerical, "non-finite loss {loss}");
    }

    let mut grads = student.zeros_like();
    let mut dh = Vec::with_capacity(2);
    for (ps, d) in pass.iter().zip(&dp) {
        let dz = match (&student.predictor, &ps.pred_cache, grads.predictor.as_mut()) {
            (Some(q), Some(c), Some(g)) => q.backward(c, d, g),
            _ => d.clone(),
        };
        dh.push(student.projector.backward(&ps.proj_cache, &dz, &mut grads.projector));
    }
    let d_tokens = place_cls(&stack_rows(&dh[0], &dh[1]), 2 * batch, s_out.seq);
    student.encoder.backward(&s_cache, &d_tokens, &mut grads.encoder)?;

    let teacher_grads = if check_teacher_grad {
        let mut g = teacher.zeros_like();
        let detached = Tensor::zeros(batch, out_dim);
        let dh1 = teacher.projector.backward(&tp.caches[0], &detached, &mut g.projector);
        let dh2 = teacher.projector.backward(&tp.caches[1], &detached, &mut g.projector);
        let d_tokens = place_cls(&stack_rows(&dh1, &dh2), 2 * batch, tp.seq);
        teacher.encoder.backward(&tp.enc_cache, &d_tokens, &mut g.encoder)?;
        Some(g)
    } else {
        None
    };

    let [a, b] = pass;
    Ok(LossOutput {
        loss,
        grads,
        stats: alloc::vec![a.stats, b.stats],
        teacher_proj: tp.z,
        student_embed: h,
        teacher_grads,
    })
}

/// Forward-only symmetric loss.
pub fn symmetric_loss(
    student: &Student,
    teacher: &Teacher,
    x: &[&MelSpec],
    x_prime: &[&MelSpec],
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    Ok(loss_and_grads(student, teacher, x, x_prime, cfg, false)?.loss)
}

/// Mean pairwise cosine similarity between rows and the mean per-dimension
/// standard deviation of the L2-normalized rows.
pub fn collapse_stats(z: &Tensor) -> Result<(f64, f64)> {
    let (n, d) = z.shape();
    if n < 2 {
        bail!(Input, "collapse statistics need at least 2 rows, got {n}");
    }
    let mut u = z.clone();
    for r in 0..n {
        let row = u.row_mut(r);
        let nr = norm(row);
        if nr == 0.0 {
            bail!(Numerical, "zero-norm projection");
        }
        row.iter_mut().for_each(|v| *v /= nr);
    }
    let mean = u.col_means();
    let sum_sq: f64 = mean.iter().map(|m| m * n as f64).map(|s| s * s).sum();
    let cosine = ((sum_sq - n as f64) / (n as f64 * (n - 1) as f64)).clamp(-1.0, 1.0);
    let mut std = 0.0;
    for (j, m) in mean.iter().enumerate() {
        let var: f64 = (0..n).map(|r| (u.get(r, j) - m) * (u.get(r, j) - m)).sum::<f64>() / n as f64;
        std += libm::sqrt(var);
    }
    Ok((cosine, std / d as f64))
}
