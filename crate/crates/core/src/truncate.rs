//! Bit-shift truncation. Works on integer bins only and never looks at the
//! float domain.

use crate::error::{Error, Result};
use crate::quant::{QuantizedTensor, MAX_BITS};

/// Drops the `b - n` least significant bits of every bin.
#[inline]
pub fn truncate_bin(bin: u16, from_bits: u32, to_bits: u32) -> u16 {
    bin >> (from_bits - to_bits)
}

/// Truncates `q` from its own precision down to `to_bits`. Scheme and
/// normalization are carried over unchanged; `to_bits == q.bits()` returns a
/// copy of the input.
pub fn truncate(q: &QuantizedTensor, to_bits: u32) -> Result<QuantizedTensor> {
    let from = q.bits();
    if !(1..=MAX_BITS).contains(&to_bits) {
        return Err(Error::BitWidth(to_bits));
    }
    if to_bits > from {
        return Err(Error::PrecisionOrder { from, to: to_bits });
    }
    let bins = q
        .bins()
        .iter()
        .map(|&b| truncate_bin(b, from, to_bits))
        .collect();
    Ok(QuantizedTensor::from_parts(
        q.dims().to_vec(),
        bins,
        q.scheme(),
        to_bits,
        *q.norm(),
    ))
}

/// Folds [`truncate`] along `path`, which must be strictly decreasing and
/// start at or below the input precision. An empty path is the identity.
pub fn truncate_chain(q: &QuantizedTensor, path: &[u32]) -> Result<QuantizedTensor> {
    let mut prev = q.bits() + 1;
    for &n in path {
        if n >= prev {
            return Err(Error::PrecisionOrder {
                from: prev.min(q.bits()),
                to: n,
            });
        }
        prev = n;
    }
    path.iter().try_fold(q.clone(), |acc, &n| truncate(&acc, n))
}
