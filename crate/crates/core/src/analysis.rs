//! Quantization-truncation analysis.
//!
//! For a target precision `n` and a starting precision `b > n`, a normalized
//! weight can land in different bins depending on whether it is quantized to
//! `n` bits directly or quantized to `b` bits and then shifted down. The
//! binwidth families below describe which inputs land in which bin under
//! each route; where the two partitions disagree lies the QT gap.
//!
//! Bin boundaries are handled as exact rationals so that coinciding
//! boundaries from the two families (e.g. `1.5/3` and `127.5/255`) are
//! recognized as equal.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::quant::{
    dequantize, dequantize_scalar, quantize_scalar, QuantConfig, QuantizedTensor, Scheme, MAX_BITS,
};
use crate::tensor::{check_unit_range, Tensor};
use crate::truncate::truncate_bin;

/// Half-open interval `[lo, hi)`; `closed_hi` marks the topmost interval of a
/// family, which also owns `hi` itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub closed_hi: bool,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        (self.lo <= x && x < self.hi) || (self.closed_hi && x == self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Exact non-negative rational used for bin boundaries.
#[derive(Debug, Clone, Copy)]
struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    const ZERO: Ratio = Ratio { num: 0, den: 1 };
    const ONE: Ratio = Ratio { num: 1, den: 1 };

    fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ratio {}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (u128::from(self.num) * u128::from(other.den))
            .cmp(&(u128::from(other.num) * u128::from(self.den)))
    }
}

/// Interior boundaries (lower edges of bins `1..=M_n`) of one family,
/// already sorted ascending.
#[derive(Debug, Clone, Copy)]
enum Family {
    /// Direct uniform quantization at `n` bits.
    Quant { n: u32 },
    /// Uniform quantization at `b` bits, truncated to `n`.
    Trunc { n: u32, b: u32 },
    /// Truncation-ready bins at `n` bits (either route).
    TruncReady { n: u32 },
}

impl Family {
    fn max_bin(self) -> u32 {
        let n = match self {
            Family::Quant { n } | Family::Trunc { n, .. } | Family::TruncReady { n } => n,
        };
        (1u32 << n) - 1
    }

    /// Lower edge of bin `k` for `1 <= k <= M_n`.
    fn edge(self, k: u32) -> Ratio {
        let k = u64::from(k);
        match self {
            // (k - 0.5) / M_n
            Family::Quant { n } => Ratio {
                num: 2 * k - 1,
                den: 2 * ((1u64 << n) - 1),
            },
            // (k * 2^(b-n) - 0.5) / M_b
            Family::Trunc { n, b } => Ratio {
                num: 2 * (k << (b - n)) - 1,
                den: 2 * ((1u64 << b) - 1),
            },
            // k / (M_n + 1)
            Family::TruncReady { n } => Ratio {
                num: k,
                den: 1u64 << n,
            },
        }
    }

    fn lower(self, k: u32) -> Ratio {
        if k == 0 {
            Ratio::ZERO
        } else {
            self.edge(k).clamp(Ratio::ZERO, Ratio::ONE)
        }
    }

    fn upper(self, k: u32) -> Ratio {
        if k == self.max_bin() {
            Ratio::ONE
        } else {
            self.edge(k + 1).clamp(Ratio::ZERO, Ratio::ONE)
        }
    }

    fn interval(self, k: u32) -> Interval {
        Interval {
            lo: self.lower(k).to_f64(),
            hi: self.upper(k).to_f64(),
            closed_hi: k == self.max_bin(),
        }
    }

    fn intervals(self) -> Vec<Interval> {
        (0..=self.max_bin()).map(|k| self.interval(k)).collect()
    }

    fn interior_edges(self) -> impl Iterator<Item = Ratio> {
        (1..=self.max_bin()).map(move |k| self.edge(k))
    }
}

fn check_bits(n: u32) -> Result<QuantConfig> {
    QuantConfig::new(n)
}

fn check_order(n: u32, b: u32) -> Result<()> {
    check_bits(n)?;
    if b > MAX_BITS {
        return Err(Error::BitWidth(b));
    }
    if b <= n {
        return Err(Error::PrecisionOrder { from: b, to: n });
    }
    Ok(())
}

fn check_bin(k: u32, n: u32) -> Result<()> {
    if k > check_bits(n)?.max_bin() {
        return Err(Error::BinRange { bin: k, bits: n });
    }
    Ok(())
}

/// Inputs that uniform quantization at `n` bits sends to bin `i`:
/// `[(i - 0.5) / M_n, (i + 0.5) / M_n)` clipped to `[0, 1]`.
pub fn quant_binwidth(i: u32, n: u32) -> Result<Interval> {
    check_bin(i, n)?;
    Ok(Family::Quant { n }.interval(i))
}

/// Inputs that land in bin `j` after uniform quantization at `b` bits and
/// truncation to `n`: `[(j 2^(b-n) - 0.5) / M_b, ((j+1) 2^(b-n) - 0.5) / M_b)`
/// clipped to `[0, 1]`.
pub fn trunc_binwidth(j: u32, n: u32, b: u32) -> Result<Interval> {
    check_order(n, b)?;
    check_bin(j, n)?;
    Ok(Family::Trunc { n, b }.interval(j))
}

/// Truncation-ready binwidth `[k / (M_n + 1), (k + 1) / (M_n + 1))`.
pub fn truncready_binwidth(k: u32, n: u32) -> Result<Interval> {
    check_bin(k, n)?;
    Ok(Family::TruncReady { n }.interval(k))
}

/// All of [`quant_binwidth`] for `i = 0..=M_n`.
pub fn quant_binwidths(n: u32) -> Result<Vec<Interval>> {
    check_bits(n)?;
    Ok(Family::Quant { n }.intervals())
}

/// All of [`trunc_binwidth`] for `j = 0..=M_n`.
pub fn trunc_binwidths(n: u32, b: u32) -> Result<Vec<Interval>> {
    check_order(n, b)?;
    Ok(Family::Trunc { n, b }.intervals())
}

/// All of [`truncready_binwidth`] for `k = 0..=M_n`.
pub fn truncready_binwidths(n: u32) -> Result<Vec<Interval>> {
    check_bits(n)?;
    Ok(Family::TruncReady { n }.intervals())
}

/// A maximal interval on which direct quantization gives `q_bin` and
/// quantize-then-truncate gives `t_bin`, with `q_bin != t_bin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QtGap {
    pub interval: Interval,
    pub q_bin: u32,
    pub t_bin: u32,
}

/// QT gap intervals for `n`-bit targets truncated from `b` bits.
///
/// Computed by merging the exact boundaries of both binwidth families and
/// reading off both bins on every elementary segment. Always empty for
/// [`Scheme::TruncQuant`], whose two families coincide.
pub fn qt_gap_intervals(n: u32, b: u32, scheme: Scheme) -> Result<Vec<QtGap>> {
    check_order(n, b)?;
    let (direct, truncated) = match scheme {
        Scheme::Uniform => (Family::Quant { n }, Family::Trunc { n, b }),
        Scheme::TruncQuant => (Family::TruncReady { n }, Family::TruncReady { n }),
    };

    let mut cuts: Vec<Ratio> = direct
        .interior_edges()
        .chain(truncated.interior_edges())
        .filter(|r| *r > Ratio::ZERO && *r < Ratio::ONE)
        .collect();
    cuts.push(Ratio::ZERO);
    cuts.push(Ratio::ONE);
    cuts.sort();
    cuts.dedup();

    let mut gaps: Vec<QtGap> = Vec::new();
    let (mut qi, mut ti) = (0u32, 0u32);
    for seg in cuts.windows(2) {
        let lo = seg[0];
        while qi < direct.max_bin() && direct.edge(qi + 1) <= lo {
            qi += 1;
        }
        while ti < truncated.max_bin() && truncated.edge(ti + 1) <= lo {
            ti += 1;
        }
        if qi == ti {
            continue;
        }
        let closed_hi = seg[1] == Ratio::ONE;
        match gaps.last_mut() {
            Some(g) if g.q_bin == qi && g.t_bin == ti && g.interval.hi == lo.to_f64() => {
                g.interval.hi = seg[1].to_f64();
                g.interval.closed_hi = closed_hi;
            }
            _ => gaps.push(QtGap {
                interval: Interval {
                    lo: lo.to_f64(),
                    hi: seg[1].to_f64(),
                    closed_hi,
                },
                q_bin: qi,
                t_bin: ti,
            }),
        }
    }
    Ok(gaps)
}

/// Total Lebesgue measure of a set of gaps.
pub fn gap_measure(gaps: &[QtGap]) -> f64 {
    gaps.iter().map(|g| g.interval.width()).sum()
}

/// Distance used to aggregate per-element errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    L1,
    L2,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
        }
    }
}

/// Sequential left-to-right accumulation in `f64`; results are independent
/// of any outer parallelism.
fn distance(pairs: impl Iterator<Item = (f64, f64)>, norm: NormKind) -> f64 {
    match norm {
        NormKind::L1 => pairs.fold(0.0, |acc, (a, b)| acc + (a - b).abs()),
        NormKind::L2 => libm::sqrt(pairs.fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b))),
    }
}

/// `Δ' ‖wn - dequantize(q)‖`, with `Δ'` taken from `q`'s normalization.
pub fn quant_error(wn: &Tensor, q: &QuantizedTensor, norm: NormKind) -> Result<f64> {
    if wn.len() != q.len() || wn.dims() != q.dims() {
        return Err(Error::ShapeMismatch {
            expected: q.len(),
            found: wn.len(),
        });
    }
    let deq = dequantize(q);
    let d = distance(
        wn.values()
            .iter()
            .zip(deq.values())
            .map(|(&a, &b)| (f64::from(a), f64::from(b))),
        norm,
    );
    Ok(f64::from(q.norm().delta_prime) * d)
}

/// One row of a QT analysis: a single layer at one `(n, b)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QtReport {
    pub layer: String,
    pub n: u32,
    pub b: u32,
    pub total_weights: usize,
    /// Weights whose direct and truncated bins differ.
    pub gap_count: usize,
    pub level_size: f64,
    /// `Δ' ‖W' - Q_n‖`
    pub e_q: f64,
    /// `Δ' ‖T_n - Q_n‖`
    pub e_t_direct: f64,
    /// `Δ' s_n N`; L1 only.
    pub e_t_factored: Option<f64>,
    pub norm_kind: NormKind,
}

/// Quantization and QT error for one normalized layer.
///
/// `Q_n` comes from quantizing `wn` to `n` bits directly and `T_n` from
/// quantizing to `b` bits and shifting down; both are mapped back with the
/// scheme's dequantization rule before distances are taken.
pub fn qt_error(
    layer: &str,
    wn: &Tensor,
    delta_prime: f64,
    n: u32,
    b: u32,
    scheme: Scheme,
    norm: NormKind,
) -> Result<QtReport> {
    check_order(n, b)?;
    check_unit_range(wn.values())?;
    let cfg_n = QuantConfig::new(n)?;
    let cfg_b = QuantConfig::new(b)?;

    // Both routes dequantize with the same affine rule, so `T_n - Q_n` is
    // an integer number of levels; accumulating it as an integer keeps the
    // QT error exact up to the final scaling.
    let spacing = match scheme {
        Scheme::Uniform => f64::from(cfg_n.max_bin()),
        Scheme::TruncQuant => f64::from(cfg_n.num_bins()),
    };
    let mut gap_count = 0usize;
    let mut level_acc = 0u64;
    let mut eq_acc = 0.0f64;
    for &x in wn.values() {
        let x = f64::from(x);
        let q = quantize_scalar(x, cfg_n, scheme);
        let t = truncate_bin(quantize_scalar(x, cfg_b, scheme), b, n);
        let qv = dequantize_scalar(q, cfg_n, scheme);
        let levels = u64::from(q.abs_diff(t));
        if levels != 0 {
            gap_count += 1;
        }
        match norm {
            NormKind::L1 => {
                eq_acc += (x - qv).abs();
                level_acc += levels;
            }
            NormKind::L2 => {
                eq_acc += (x - qv) * (x - qv);
                level_acc += levels * levels;
            }
        }
    }
    let (eq_acc, et_acc) = match norm {
        NormKind::L1 => (eq_acc, level_acc as f64 / spacing),
        NormKind::L2 => (libm::sqrt(eq_acc), libm::sqrt(level_acc as f64) / spacing),
    };

    let level_size = cfg_n.level_size();
    Ok(QtReport {
        layer: layer.into(),
        n,
        b,
        total_weights: wn.len(),
        gap_count,
        level_size,
        e_q: delta_prime * eq_acc,
        e_t_direct: delta_prime * et_acc,
        e_t_factored: (norm == NormKind::L1).then_some(delta_prime * level_size * gap_count as f64),
        norm_kind: norm,
    })
}
