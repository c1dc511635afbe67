//! The two weight quantizers, dequantization and the straight-through
//! gradient rule.
//!
//! Both quantizers expect inputs already normalized into `[0, 1]` and
//! produce unsigned bins in `0..=M_n` with `M_n = 2^n - 1`. The zero point
//! is always zero under this convention.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{check_dims, check_unit_range, NormalizationParams, Tensor};

/// Largest supported precision; bins are stored as `u16`.
pub const MAX_BITS: u32 = 16;

/// Which quantizer produced a set of bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Round-to-nearest on `M_n` levels: `round(x * M_n)`.
    Uniform,
    /// Truncation-ready floor quantizer: `floor(x * (M_n + 1))`.
    TruncQuant,
}

/// Derived constants for an `n`-bit quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    bits: u32,
}

impl QuantConfig {
    pub fn new(bits: u32) -> Result<Self> {
        if (1..=MAX_BITS).contains(&bits) {
            Ok(Self { bits })
        } else {
            Err(Error::BitWidth(bits))
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// `M_n = 2^n - 1`, the largest bin.
    pub fn max_bin(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Number of bins, `M_n + 1 = 2^n`.
    pub fn num_bins(&self) -> u32 {
        1u32 << self.bits
    }

    /// Level size `s_n = 1 / M_n`.
    pub fn level_size(&self) -> f64 {
        1.0 / f64::from(self.max_bin())
    }

    /// Step size `Δ_n` in the normalized domain. Equal to the level size.
    pub fn step_size(&self) -> f64 {
        self.level_size()
    }

    pub fn zero_point(&self) -> i32 {
        0
    }

    /// Factor `M_n / (M_n + 1)` applied to gradients under TruncQuant.
    pub fn ste_scale(&self) -> f64 {
        f64::from(self.max_bin()) / f64::from(self.num_bins())
    }
}

/// Rounding used by the uniform quantizer. Ties go away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    libm::round(x)
}

/// Uniform bin for one normalized value. `x` must lie in `[0, 1]`.
#[inline]
pub fn uniform_bin(x: f64, cfg: QuantConfig) -> u16 {
    let m = cfg.max_bin();
    (round_half_away(x * f64::from(m)) as u32).min(m) as u16
}

/// TruncQuant bin for one normalized value. `x` must lie in `[0, 1]`;
/// `x == 1` lands on `M_n` instead of the unrepresentable `M_n + 1`.
#[inline]
pub fn truncquant_bin(x: f64, cfg: QuantConfig) -> u16 {
    // Scaling by a power of two is exact, so the floor is too.
    let k = libm::floor(x * f64::from(cfg.num_bins())) as u32;
    k.min(cfg.max_bin()) as u16
}

#[inline]
pub fn quantize_scalar(x: f64, cfg: QuantConfig, scheme: Scheme) -> u16 {
    match scheme {
        Scheme::Uniform => uniform_bin(x, cfg),
        Scheme::TruncQuant => truncquant_bin(x, cfg),
    }
}

/// Normalized value represented by `bin`.
#[inline]
pub fn dequantize_scalar(bin: u16, cfg: QuantConfig, scheme: Scheme) -> f64 {
    match scheme {
        Scheme::Uniform => f64::from(bin) / f64::from(cfg.max_bin()),
        Scheme::TruncQuant => (f64::from(bin) + 0.5) / f64::from(cfg.num_bins()),
    }
}

/// Integer bins plus everything needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    dims: Vec<usize>,
    bins: Vec<u16>,
    scheme: Scheme,
    bits: u32,
    norm: NormalizationParams,
}

impl QuantizedTensor {
    pub fn new(
        dims: Vec<usize>,
        bins: Vec<u16>,
        scheme: Scheme,
        bits: u32,
        norm: NormalizationParams,
    ) -> Result<Self> {
        let cfg = QuantConfig::new(bits)?;
        check_dims(&dims, bins.len())?;
        if let Some(&bin) = bins.iter().find(|&&b| u32::from(b) > cfg.max_bin()) {
            return Err(Error::BinRange {
                bin: bin.into(),
                bits,
            });
        }
        Ok(Self {
            dims,
            bins,
            scheme,
            bits,
            norm,
        })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts(
        dims: Vec<usize>,
        bins: Vec<u16>,
        scheme: Scheme,
        bits: u32,
        norm: NormalizationParams,
    ) -> Self {
        Self {
            dims,
            bins,
            scheme,
            bits,
            norm,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bins(&self) -> &[u16] {
        &self.bins
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn config(&self) -> QuantConfig {
        QuantConfig { bits: self.bits }
    }

    pub fn norm(&self) -> &NormalizationParams {
        &self.norm
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Quantizes a normalized tensor with the given scheme. `norm` is attached
/// to the result so it can later be mapped back to the weight domain.
pub fn quantize(
    wn: &Tensor,
    cfg: QuantConfig,
    scheme: Scheme,
    norm: NormalizationParams,
) -> Result<QuantizedTensor> {
    check_unit_range(wn.values())?;
    let bins = wn
        .values()
        .iter()
        .map(|&x| quantize_scalar(f64::from(x), cfg, scheme))
        .collect();
    Ok(QuantizedTensor::from_parts(
        wn.dims().to_vec(),
        bins,
        scheme,
        cfg.bits,
        norm,
    ))
}

/// `round(x * M_n)` per element.
pub fn uniform_quantize(
    wn: &Tensor,
    cfg: QuantConfig,
    norm: NormalizationParams,
) -> Result<QuantizedTensor> {
    quantize(wn, cfg, Scheme::Uniform, norm)
}

/// `floor(x * (M_n + 1))` per element, with `1.0` clamped to `M_n`.
pub fn truncquant(
    wn: &Tensor,
    cfg: QuantConfig,
    norm: NormalizationParams,
) -> Result<QuantizedTensor> {
    quantize(wn, cfg, Scheme::TruncQuant, norm)
}

/// Maps bins back into `[0, 1]`: `bin / M_n` for the uniform scheme and the
/// bin center `(bin + 0.5) / (M_n + 1)` for TruncQuant.
pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    let cfg = q.config();
    let values = q
        .bins
        .iter()
        .map(|&b| dequantize_scalar(b, cfg, q.scheme) as f32)
        .collect();
    Tensor::new(q.dims.clone(), values).expect("dims validated on construction")
}

/// Straight-through gradient through the quantizer. Identity for the
/// uniform scheme, scaled by `M_n / (M_n + 1)` for TruncQuant.
pub fn ste_backward(upstream: &Tensor, cfg: QuantConfig, scheme: Scheme) -> Tensor {
    let mut out = upstream.clone();
    ste_backward_in_place(out.values_mut(), cfg, scheme);
    out
}

pub fn ste_backward_in_place(grad: &mut [f32], cfg: QuantConfig, scheme: Scheme) {
    if scheme == Scheme::TruncQuant {
        let scale = cfg.ste_scale() as f32;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg(n: u32) -> QuantConfig {
        QuantConfig::new(n).unwrap()
    }

    #[test]
    fn config_constants() {
        for n in 1..=16 {
            let c = cfg(n);
            assert_eq!(c.max_bin(), (1 << n) - 1);
            assert!((c.level_size() * f64::from(c.max_bin()) - 1.0).abs() < 1e-12);
            assert_eq!(c.zero_point(), 0);
        }
        assert_eq!(QuantConfig::new(0), Err(Error::BitWidth(0)));
        assert_eq!(QuantConfig::new(17), Err(Error::BitWidth(17)));
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_bin(0.0, cfg(2)), 0);
        assert_eq!(uniform_bin(1.0, cfg(2)), 3);
        assert_eq!(uniform_bin(0.2, cfg(2)), 1);
        // 0.5 * 255 = 127.5 exactly: the tie goes up.
        assert_eq!(uniform_bin(0.5, cfg(8)), 128);
        assert_eq!(uniform_bin(f64::from(0.5f32), cfg(8)), 128);
    }

    #[test]
    fn truncquant_examples() {
        assert_eq!(truncquant_bin(1.0, cfg(2)), 3);
        assert_eq!(truncquant_bin(0.2, cfg(2)), 0);
        assert_eq!(truncquant_bin(0.5, cfg(3)), 4);
        assert_eq!(truncquant_bin(0.0, cfg(1)), 0);
    }

    #[test]
    fn quantize_rejects_out_of_range() {
        let t = Tensor::from_vec(vec![0.5, -0.1]);
        let unit = NormalizationParams::unit();
        assert_eq!(
            uniform_quantize(&t, cfg(2), unit),
            Err(Error::OutOfUnitRange {
                index: 1,
                value: -0.1
            })
        );
        let t = Tensor::from_vec(vec![1.0 + f32::EPSILON]);
        assert!(truncquant(&t, cfg(2), unit).is_err());
    }

    #[test]
    fn dequantize_examples() {
        let unit = NormalizationParams::unit();
        let q = QuantizedTensor::new(vec![4], vec![0, 1, 2, 3], Scheme::Uniform, 2, unit).unwrap();
        assert_eq!(dequantize(&q).values(), &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let q = QuantizedTensor::new(vec![2], vec![0, 3], Scheme::TruncQuant, 2, unit).unwrap();
        assert_eq!(dequantize(&q).values(), &[0.125, 0.875]);
        let q = QuantizedTensor::new(vec![1], vec![0], Scheme::TruncQuant, 1, unit).unwrap();
        assert_eq!(dequantize(&q).values(), &[0.25]);
    }

    #[test]
    fn quantized_tensor_validates_bins() {
        let unit = NormalizationParams::unit();
        assert_eq!(
            QuantizedTensor::new(vec![1], vec![4], Scheme::Uniform, 2, unit),
            Err(Error::BinRange { bin: 4, bits: 2 })
        );
        assert!(QuantizedTensor::new(vec![2], vec![1], Scheme::Uniform, 2, unit).is_err());
    }

    #[test]
    fn ste_examples() {
        let g = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(
            ste_backward(&g, cfg(2), Scheme::TruncQuant).values(),
            &[0.75, -1.5, 0.375]
        );
        assert_eq!(ste_backward(&g, cfg(5), Scheme::Uniform), g);
        let one = Tensor::from_vec(vec![1.0]);
        let v = ste_backward(&one, cfg(8), Scheme::TruncQuant).values()[0];
        assert!((f64::from(v) - 255.0 / 256.0).abs() < 1e-7);
    }
}
