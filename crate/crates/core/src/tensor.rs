//! Float tensors and the invertible map into the `[0, 1]` analysis domain.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        check_dims(&dims, values.len())?;
        Ok(Self { dims, values })
    }

    /// One-dimensional tensor over `values`.
    pub fn from_vec(values: Vec<f32>) -> Self {
        Self {
            dims: alloc::vec![values.len()],
            values,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Checks that `dims` are all positive and multiply out to `len`.
pub(crate) fn check_dims(dims: &[usize], len: usize) -> Result<()> {
    let expected = dims.iter().try_fold(
        1usize,
        |acc, &d| if d == 0 { None } else { acc.checked_mul(d) },
    );
    match expected {
        Some(expected) if !dims.is_empty() && expected == len => Ok(()),
        _ => Err(Error::Dims {
            dims: dims.to_vec(),
            expected: expected.unwrap_or(0),
            found: len,
        }),
    }
}

/// How raw weights are mapped into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    /// `tanh(w) / (2 max|tanh(w)|) + 0.5`
    DorefaTanh,
    /// Affine map of `[min, max]` onto `[0, 1]`.
    MinMax,
}

/// Constants needed to normalize a tensor and to undo it.
///
/// `aux` holds `[max|tanh(w)|, 0]` for [`NormMode::DorefaTanh`] and
/// `[min, max]` for [`NormMode::MinMax`]. `delta_prime` is the scale that
/// turns a level size in the normalized domain into a step size in the
/// weight domain: `2 * mean(|tanh(w)| / max|tanh(w)|)` for the tanh map
/// and `max - min` for the affine one.
///
/// All fields are `f32` so that a parameter set survives a file round trip
/// bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationParams {
    pub mode: NormMode,
    pub delta_prime: f32,
    pub aux: [f32; 2],
}

impl NormalizationParams {
    /// Identity normalization over `[0, 1]` with unit scale.
    pub const fn unit() -> Self {
        Self {
            mode: NormMode::MinMax,
            delta_prime: 1.0,
            aux: [0.0, 1.0],
        }
    }

    /// Maps a raw weight into `[0, 1]`.
    pub fn apply(&self, w: f32) -> f32 {
        let y = match self.mode {
            NormMode::DorefaTanh => {
                let m = f64::from(self.aux[0]);
                libm::tanh(f64::from(w)) / (2.0 * m) + 0.5
            }
            NormMode::MinMax => {
                let (lo, hi) = (f64::from(self.aux[0]), f64::from(self.aux[1]));
                (f64::from(w) - lo) / (hi - lo)
            }
        };
        y.clamp(0.0, 1.0) as f32
    }

    /// Maps a normalized value back to the weight domain.
    pub fn invert(&self, wn: f32) -> f32 {
        let y = f64::from(wn);
        match self.mode {
            NormMode::DorefaTanh => {
                let m = f64::from(self.aux[0]);
                libm::atanh((y - 0.5) * 2.0 * m) as f32
            }
            NormMode::MinMax => {
                let (lo, hi) = (f64::from(self.aux[0]), f64::from(self.aux[1]));
                (lo + y * (hi - lo)) as f32
            }
        }
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// Fits normalization parameters to `values` without applying them.
pub fn fit_params(values: &[f32], mode: NormMode) -> Result<NormalizationParams> {
    check_finite(values)?;
    match mode {
        NormMode::DorefaTanh => {
            let max_tanh = values
                .iter()
                .map(|&w| libm::tanh(f64::from(w)).abs())
                .fold(0.0f64, f64::max);
            if max_tanh == 0.0 {
                return Err(Error::Degenerate("all weights are zero"));
            }
            let max_tanh = max_tanh as f32;
            let m = f64::from(max_tanh);
            let sum: f64 = values
                .iter()
                .map(|&w| libm::tanh(f64::from(w)).abs() / m)
                .sum();
            Ok(NormalizationParams {
                mode,
                delta_prime: (2.0 * sum / values.len() as f64) as f32,
                aux: [max_tanh, 0.0],
            })
        }
        NormMode::MinMax => {
            let (lo, hi) = values
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &w| {
                    (lo.min(w), hi.max(w))
                });
            if lo == hi {
                return Err(Error::Degenerate("min equals max"));
            }
            Ok(NormalizationParams {
                mode,
                delta_prime: hi - lo,
                aux: [lo, hi],
            })
        }
    }
}

/// Normalizes `w` into `[0, 1]`, returning the parameters needed to invert.
pub fn normalize(w: &Tensor, mode: NormMode) -> Result<(Tensor, NormalizationParams)> {
    let params = fit_params(w.values(), mode)?;
    Ok((normalize_with(w, &params), params))
}

/// Applies already-fitted parameters.
pub fn normalize_with(w: &Tensor, params: &NormalizationParams) -> Tensor {
    Tensor {
        dims: w.dims.clone(),
        values: w.values.iter().map(|&x| params.apply(x)).collect(),
    }
}

/// Inverse of [`normalize`]; every element of `wn` must lie in `[0, 1]`.
pub fn denormalize(wn: &Tensor, params: &NormalizationParams) -> Result<Tensor> {
    check_unit_range(wn.values())?;
    Ok(Tensor {
        dims: wn.dims.clone(),
        values: wn.values.iter().map(|&y| params.invert(y)).collect(),
    })
}

pub(crate) fn check_unit_range(values: &[f32]) -> Result<()> {
    // `contains` is false for NaN as well.
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::OutOfUnitRange {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn dims_must_match_payload() {
        assert!(Tensor::new(vec![3, 4], vec![0.0; 12]).is_ok());
        assert!(matches!(
            Tensor::new(vec![3, 4], vec![0.0; 11]),
            Err(Error::Dims {
                expected: 12,
                found: 11,
                ..
            })
        ));
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn minmax_symmetric() {
        let (wn, p) = normalize(&Tensor::from_vec(vec![-1.0, 0.0, 1.0]), NormMode::MinMax).unwrap();
        assert_eq!(wn.values(), &[0.0, 0.5, 1.0]);
        assert_eq!(p.aux, [-1.0, 1.0]);
        assert_eq!(p.delta_prime, 2.0);
        let back = denormalize(&wn, &p).unwrap();
        assert_eq!(back.values(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            normalize(&Tensor::from_vec(vec![0.0]), NormMode::MinMax),
            Err(Error::Degenerate("min equals max"))
        );
        assert_eq!(
            normalize(&Tensor::from_vec(vec![0.0, 0.0]), NormMode::DorefaTanh),
            Err(Error::Degenerate("all weights are zero"))
        );
        assert!(matches!(
            normalize(&Tensor::from_vec(vec![0.0, f32::NAN]), NormMode::MinMax),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert_eq!(
            normalize(&Tensor::from_vec(vec![]), NormMode::DorefaTanh),
            Err(Error::Empty)
        );
    }

    #[test]
    fn denormalize_rejects_out_of_range() {
        let p = NormalizationParams::unit();
        assert_eq!(
            denormalize(&Tensor::from_vec(vec![0.5, 1.5]), &p),
            Err(Error::OutOfUnitRange {
                index: 1,
                value: 1.5
            })
        );
        assert!(denormalize(&Tensor::from_vec(vec![f32::NAN]), &p).is_err());
    }
}
