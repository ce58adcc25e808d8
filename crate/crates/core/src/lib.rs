//! Numerical core for segment-level teacher-student audio pre-training.
//!
//! Everything here is pure computation over owned buffers: the log-mel
//! front end, view creation, the CLS-token transformer encoder with its
//! hand-written backward pass, projector/predictor heads and the symmetric
//! normalized-MSE objective, EMA teacher updates, cosine schedules,
//! optimizers, downstream probes and metrics, and the synthetic signal
//! generators. The crate is `no_std` (it only needs `alloc`); IO, file
//! formats and the command-line tool live in the `segssl` crate.
//!
//! The `std` feature (on by default) only turns on runtime SIMD dispatch in
//! the GEMM kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dsp;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod module;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod views;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::Tensor;
