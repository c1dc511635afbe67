//! Truncation-ready weight quantization.
//!
//! A weight tensor quantized with [`quant::truncquant`] at `b` bits can be
//! brought down to any `n <= b` bits by a plain right shift of its integer
//! bins, and the result is identical to quantizing the float weights at `n`
//! bits directly. The conventional rounding quantizer does not have this
//! property; [`analysis`] measures by how much it misses.
//!
//! # Modules
//!
//! - [`tensor`] -- float tensors and the normalization into the `[0, 1]` domain
//! - [`quant`] -- uniform and truncation-ready quantizers, dequantization, STE rule
//! - [`truncate`] -- bit-shift truncation and truncation chains
//! - [`analysis`] -- binwidth intervals, QT gaps and error metrics
//! - [`qat`] -- toy quantization-aware training on a small MLP
//! - [`storage`] -- closed-form model storage estimator
//!
//! The crate is `no_std` and only needs `alloc`. File formats, CSV and the
//! command-line tool live in the `truncquant` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod error;
pub mod qat;
pub mod quant;
pub mod storage;
pub mod tensor;
pub mod truncate;

pub use analysis::{Interval, NormKind, QtGap, QtReport};
pub use error::{Error, Result};
pub use quant::{QuantConfig, QuantizedTensor, Scheme};
pub use tensor::{NormMode, NormalizationParams, Tensor};
pub use truncate::{truncate, truncate_chain};
