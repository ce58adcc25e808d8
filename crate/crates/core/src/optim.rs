//! Optimizers over [`Module`] parameter sets. Moment buffers are zeroed
//! clones of the parameters, so they share names and layout.

use crate::error::{bail, Result};
use crate::module::{check_same_layout, Module};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with decoupled weight decay, applied to weight matrices only.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<M: Module> {
    pub cfg: AdamConfig,
    pub m: M,
    pub v: M,
    pub t: u64,
}

impl<M: Module> AdamW<M> {
    pub fn new(params: &M, cfg: AdamConfig) -> Self {
        Self { cfg, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut M, grads: &M, lr: f64, wd: f64) -> Result<()> {
        check_same_layout(params, grads)?;
        check_same_layout(params, &self.m)?;
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            if !p.kind.trainable() {
                continue;
            }
            let decay = if p.kind.decays() { 1.0 - lr * wd } else { 1.0 };
            let it = p.tensor.data_mut().iter_mut().zip(g.tensor.data()).zip(m.tensor.data_mut()).zip(v.tensor.data_mut());
            for (((pv, gv), mv), vv) in it {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let update = (*mv / bc1) / (libm::sqrt(*vv / bc2) + eps);
                *pv = *pv * decay - lr * update;
            }
        }
        Ok(())
    }
}

/// SGD with momentum and coupled L2 weight decay on weight matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<M: Module> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buf: M,
}

impl<M: Module> Sgd<M> {
    pub fn new(params: &M, momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, buf: params.zeros_like() }
    }

    pub fn step(&mut self, params: &mut M, grads: &M, lr: f64) -> Result<()> {
        check_same_layout(params, grads)?;
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let bs = self.buf.tensors_mut();
        for ((p, g), b) in ps.into_iter().zip(gs).zip(bs) {
            if !p.kind.trainable() {
                continue;
            }
            let wd = if p.kind.decays() { self.weight_decay } else { 0.0 };
            for ((pv, gv), bv) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()).zip(b.tensor.data_mut()) {
                let d = gv + wd * *pv;
                *bv = self.momentum * *bv + d;
                *pv -= lr * *bv;
            }
        }
        Ok(())
    }
}

/// Global L2 norm of the trainable gradients.
pub fn grad_norm<M: Module>(grads: &M) -> f64 {
    libm::sqrt(grads.tensors().iter().filter(|t| t.kind.trainable()).map(|t| t.tensor.sum_sq()).sum())
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<M: Module>(grads: &mut M, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        bail!(Config, "clip norm must be positive, got {max_norm}");
    }
    let n = grad_norm(grads);
    if n > max_norm {
        let s = max_norm / n;
        for t in grads.tensors_mut() {
            t.tensor.scale(s);
        }
    }
    Ok(n)
}
