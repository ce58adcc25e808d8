//! Uniform named access to the tensors of a network.
//!
//! Gradients, optimizer moments and EMA targets reuse the parameter structs
//! themselves (a zeroed clone of a network is its gradient buffer), so
//! walking two networks in lockstep only needs a stable visiting order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// How a tensor takes part in optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Weight matrix of a linear map; subject to weight decay.
    Weight,
    Bias,
    /// Scale/shift of a normalization layer.
    Norm,
    /// Class token and positional table.
    Token,
    /// Non-trainable state (batch-norm running statistics).
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }

    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Debug)]
pub struct Named<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: T,
}

pub trait Module: Clone {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Named<&'a Tensor>>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<&'a mut Tensor>>);

    fn tensors(&self) -> Vec<Named<&Tensor>> {
        let mut v = Vec::new();
        self.visit("", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<Named<&mut Tensor>> {
        let mut v = Vec::new();
        self.visit_mut("", &mut v);
        v
    }

    /// A clone with every tensor (buffers included) set to zero.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.tensor.fill(0.0);
        }
        z
    }

    fn num_trainable(&self) -> usize {
        self.tensors().iter().filter(|t| t.kind.trainable()).map(|t| t.tensor.len()).sum()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// Checks that two networks expose the same tensor names and shapes.
pub fn check_same_layout<A: Module, B: Module>(a: &A, b: &B) -> Result<()> {
    let ta = a.tensors();
    let tb = b.tensors();
    if ta.len() != tb.len() {
        bail!(Shape, "tensor count {} vs {}", ta.len(), tb.len());
    }
    for (x, y) in ta.iter().zip(&tb) {
        if x.name != y.name || x.tensor.shape() != y.tensor.shape() {
            bail!(
                Shape,
                "{} {:?} vs {} {:?}",
                x.name,
                x.tensor.shape(),
                y.name,
                y.tensor.shape()
            );
        }
    }
    Ok(())
}

/// Order-sensitive FNV-1a digest over all tensor bits; cheap identity check
/// for "parameters unchanged" assertions.
pub fn checksum<M: Module>(m: &M) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in m.tensors() {
        for b in t.name.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
        for x in t.tensor.data() {
            h = (h ^ x.to_bits()).wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}
