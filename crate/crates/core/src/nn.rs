//! Layers with explicit forward caches and backward passes.
//!
//! Backward functions *accumulate* parameter gradients into a gradient
//! buffer of the same type as the layer, and return the input gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::module::{join, Module, Named, ParamKind};
use crate::rng::{self, Rng};
use crate::tensor::{gemm, Tensor};

/// `y = x W + b`, with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self { weight: Tensor::zeros(inp, out), bias: Tensor::zeros(1, out) }
    }

    /// Truncated-normal weights (std 0.02), zero bias.
    pub fn init_trunc_normal(inp: usize, out: usize, rng: &mut Rng) -> Self {
        let mut l = Self::zeros(inp, out);
        l.weight.data_mut().iter_mut().for_each(|w| *w = rng::truncated_normal(rng, 0.02));
        l
    }

    /// Uniform `±1/sqrt(in)` for weights and bias.
    pub fn init_uniform(inp: usize, out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / libm::sqrt(inp as f64);
        let mut l = Self::zeros(inp, out);
        l.weight.data_mut().iter_mut().for_each(|w| *w = rng::uniform(rng, -bound, bound));
        l.bias.data_mut().iter_mut().for_each(|w| *w = rng::uniform(rng, -bound, bound));
        l
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = Tensor::zeros(x.rows(), self.out_dim());
        gemm(1.0, x.view(), self.weight.view(), 0.0, y.view_mut());
        y.add_row_broadcast(self.bias.data());
        y
    }

    /// Accumulates `dW += x^T dy`, `db += colsum(dy)` and returns `dx = dy W^T`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Linear) -> Tensor {
        self.backward_params(x, dy, grad);
        let mut dx = Tensor::zeros(dy.rows(), self.in_dim());
        gemm(1.0, dy.view(), self.weight.view_t(), 0.0, dx.view_mut());
        dx
    }

    pub fn backward_params(&self, x: &Tensor, dy: &Tensor, grad: &mut Linear) {
        gemm(1.0, x.view_t(), dy.view(), 1.0, grad.weight.view_mut());
        dy.accumulate_col_sums(grad.bias.data_mut());
    }
}

impl Module for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>) {
        out.push(Named { name: join(prefix, "weight"), kind: ParamKind::Weight, tensor: &self.weight });
        out.push(Named { name: join(prefix, "bias"), kind: ParamKind::Bias, tensor: &self.bias });
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>) {
        out.push(Named { name: join(prefix, "weight"), kind: ParamKind::Weight, tensor: &mut self.weight });
        out.push(Named { name: join(prefix, "bias"), kind: ParamKind::Bias, tensor: &mut self.bias });
    }
}

/// Row-wise layer normalization with learnable scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Tensor,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Tensor::filled(1, dim, 1.0), beta: Tensor::zeros(1, dim) }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LayerNormCache) {
        let d = x.cols();
        let mut xhat = x.clone();
        let mut rstd = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = xhat.row_mut(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            row.iter_mut().for_each(|v| *v = (*v - mean) * rs);
            rstd.push(rs);
        }
        let mut y = xhat.clone();
        let (g, b) = (self.gamma.data(), self.beta.data());
        for r in 0..y.rows() {
            for ((v, gi), bi) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gi + bi;
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Tensor, grad: &mut LayerNorm) -> Tensor {
        let d = dy.cols();
        let n = d as f64;
        let g = self.gamma.data();
        let mut dx = Tensor::zeros(dy.rows(), d);
        let mut dxhat = vec![0.0; d];
        for r in 0..dy.rows() {
            let dyr = dy.row(r);
            let xh = cache.xhat.row(r);
            {
                let dg = grad.gamma.data_mut();
                for i in 0..d {
                    dg[i] += dyr[i] * xh[i];
                }
            }
            {
                let db = grad.beta.data_mut();
                for i in 0..d {
                    db[i] += dyr[i];
                }
            }
            let mut sum = 0.0;
            let mut dot = 0.0;
            for i in 0..d {
                dxhat[i] = dyr[i] * g[i];
                sum += dxhat[i];
                dot += dxhat[i] * xh[i];
            }
            let rs = cache.rstd[r];
            for (i, out) in dx.row_mut(r).iter_mut().enumerate() {
                *out = rs / n * (n * dxhat[i] - sum - xh[i] * dot);
            }
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>) {
        out.push(Named { name: join(prefix, "gamma"), kind: ParamKind::Norm, tensor: &self.gamma });
        out.push(Named { name: join(prefix, "beta"), kind: ParamKind::Norm, tensor: &self.beta });
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>) {
        out.push(Named { name: join(prefix, "gamma"), kind: ParamKind::Norm, tensor: &mut self.gamma });
        out.push(Named { name: join(prefix, "beta"), kind: ParamKind::Norm, tensor: &mut self.beta });
    }
}

/// Whether batch normalization uses the statistics of the current batch or
/// its running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Batch normalization over the rows of a `batch x features` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Statistics of one training-mode batch, to be folded into the running
/// estimates with [`BatchNorm::update_running`].
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    xhat: Tensor,
    rstd: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::filled(1, dim, 1.0),
            beta: Tensor::zeros(1, dim),
            running_mean: Tensor::zeros(1, dim),
            running_var: Tensor::filled(1, dim, 1.0),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: NormMode) -> Result<(Tensor, BatchNormCache, Option<BatchStats>)> {
        let (n, d) = x.shape();
        let (mean, var_biased, stats) = match mode {
            NormMode::Train => {
                if n < 2 {
                    bail!(Input, "batch normalization in training mode needs at least 2 rows, got {n}");
                }
                let mean = x.col_means();
                let mut var = vec![0.0; d];
                for r in 0..n {
                    for (j, v) in x.row(r).iter().enumerate() {
                        var[j] += (v - mean[j]) * (v - mean[j]);
                    }
                }
                let biased: Vec<f64> = var.iter().map(|v| v / n as f64).collect();
                let unbiased: Vec<f64> = var.iter().map(|v| v / (n - 1) as f64).collect();
                (mean.clone(), biased, Some(BatchStats { mean, var: unbiased }))
            }
            NormMode::Eval => (self.running_mean.data().to_vec(), self.running_var.data().to_vec(), None),
        };
        let rstd: Vec<f64> = var_biased.iter().map(|v| 1.0 / libm::sqrt(v + BATCH_NORM_EPS)).collect();
        let mut xhat = x.clone();
        for r in 0..n {
            for (j, v) in xhat.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[j]) * rstd[j];
            }
        }
        let mut y = xhat.clone();
        let (g, b) = (self.gamma.data(), self.beta.data());
        for r in 0..n {
            for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = *v * g[j] + b[j];
            }
        }
        Ok((y, BatchNormCache { xhat, rstd }, stats))
    }

    pub fn update_running(&mut self, stats: &BatchStats, momentum: f64) {
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }

    /// Backward pass. `mode` must match the forward call: in eval mode the
    /// statistics are constants.
    pub fn backward(&self, cache: &BatchNormCache, dy: &Tensor, mode: NormMode, grad: &mut BatchNorm) -> Tensor {
        let (n, d) = dy.shape();
        let g = self.gamma.data();
        let mut dxhat = Tensor::zeros(n, d);
        for r in 0..n {
            for j in 0..d {
                let v = dy.get(r, j);
                grad.gamma.data_mut()[j] += v * cache.xhat.get(r, j);
                grad.beta.data_mut()[j] += v;
                dxhat.set(r, j, v * g[j]);
            }
        }
        match mode {
            NormMode::Eval => {
                for r in 0..n {
                    for (j, v) in dxhat.row_mut(r).iter_mut().enumerate() {
                        *v *= cache.rstd[j];
                    }
                }
                dxhat
            }
            NormMode::Train => {
                let nf = n as f64;
                let mut sum = vec![0.0; d];
                let mut dot = vec![0.0; d];
                for r in 0..n {
                    for j in 0..d {
                        let v = dxhat.get(r, j);
                        sum[j] += v;
                        dot[j] += v * cache.xhat.get(r, j);
                    }
                }
                let mut dx = Tensor::zeros(n, d);
                for r in 0..n {
                    for j in 0..d {
                        let v = cache.rstd[j] / nf * (nf * dxhat.get(r, j) - sum[j] - cache.xhat.get(r, j) * dot[j]);
                        dx.set(r, j, v);
                    }
                }
                dx
            }
        }
    }
}

impl Module for BatchNorm {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>) {
        out.push(Named { name: join(prefix, "gamma"), kind: ParamKind::Norm, tensor: &self.gamma });
        out.push(Named { name: join(prefix, "beta"), kind: ParamKind::Norm, tensor: &self.beta });
        out.push(Named { name: join(prefix, "running_mean"), kind: ParamKind::Buffer, tensor: &self.running_mean });
        out.push(Named { name: join(prefix, "running_var"), kind: ParamKind::Buffer, tensor: &self.running_var });
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>) {
        out.push(Named { name: join(prefix, "gamma"), kind: ParamKind::Norm, tensor: &mut self.gamma });
        out.push(Named { name: join(prefix, "beta"), kind: ParamKind::Norm, tensor: &mut self.beta });
        out.push(Named { name: join(prefix, "running_mean"), kind: ParamKind::Buffer, tensor: &mut self.running_mean });
        out.push(Named { name: join(prefix, "running_var"), kind: ParamKind::Buffer, tensor: &mut self.running_var });
    }
}

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// In-place numerically stable softmax over each row.
pub fn softmax_rows(x: &mut Tensor) {
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}
