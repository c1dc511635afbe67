//! Closed-form storage estimate for three ways of serving a model at
//! several weight precisions:
//!
//! - one dedicated quantized model per precision,
//! - a once-for-all network that keeps the fp32 parent around,
//! - a single truncation-ready model stored at the highest precision.
//!
//! Sizes are fractional bytes (`params * bits / 8`) so every ratio is
//! invariant under scaling all parameter counts.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::quant::MAX_BITS;

pub const FP_BYTES_PER_PARAM: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerPosition {
    First,
    Hidden,
    Last,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: String,
    pub param_count: u64,
    pub position: LayerPosition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Dedicated,
    OfaFp32Parent,
    TruncQuant,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Dedicated => "dedicated",
            Strategy::OfaFp32Parent => "ofa_fp32_parent",
            Strategy::TruncQuant => "truncquant",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StorageModel {
    layers: Vec<LayerEntry>,
    /// First and last layers stay in fp32 in the quantized strategies.
    keep_first_last_fp32: bool,
}

impl StorageModel {
    /// With `keep_first_last_fp32` the table needs exactly one first and one
    /// last layer; without it, at most one of each.
    pub fn new(layers: Vec<LayerEntry>, keep_first_last_fp32: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(l) = layers.iter().find(|l| l.param_count == 0) {
            return Err(Error::Config(alloc::format!(
                "layer {} has no parameters",
                l.name
            )));
        }
        let count = |p| layers.iter().filter(|l| l.position == p).count();
        let (first, last) = (count(LayerPosition::First), count(LayerPosition::Last));
        let ok = if keep_first_last_fp32 {
            first == 1 && last == 1
        } else {
            first <= 1 && last <= 1
        };
        if !ok {
            return Err(Error::Config(alloc::format!(
                "expected one first and one last layer, found {first} and {last}"
            )));
        }
        Ok(Self {
            layers,
            keep_first_last_fp32,
        })
    }

    pub fn layers(&self) -> &[LayerEntry] {
        &self.layers
    }

    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(|l| l.param_count).sum()
    }

    fn exempt_params(&self) -> u64 {
        if !self.keep_first_last_fp32 {
            return 0;
        }
        self.layers
            .iter()
            .filter(|l| l.position != LayerPosition::Hidden)
            .map(|l| l.param_count)
            .sum()
    }

    pub fn fp32_bytes(&self) -> f64 {
        self.total_params() as f64 * FP_BYTES_PER_PARAM
    }

    /// One model with quantized layers at `bits`, exempt layers in fp32.
    pub fn quantized_bytes(&self, bits: u32) -> Result<f64> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::BitWidth(bits));
        }
        let exempt = self.exempt_params();
        let quantized = self.total_params() - exempt;
        Ok(exempt as f64 * FP_BYTES_PER_PARAM + quantized as f64 * f64::from(bits) / 8.0)
    }

    pub fn dedicated_bytes(&self, precisions: &[u32]) -> Result<f64> {
        if precisions.is_empty() {
            return Err(Error::Config("no precisions for dedicated models".into()));
        }
        precisions.iter().map(|&n| self.quantized_bytes(n)).sum()
    }

    pub fn truncquant_bytes(&self, max_bits: u32) -> Result<f64> {
        self.quantized_bytes(max_bits)
    }

    /// Bytes for every strategy, each with its ratio to the truncation-ready
    /// model. Dedicated models cover `precisions`; the truncation-ready model
    /// stores `max(precisions)` bits.
    pub fn report(&self, precisions: &[u32]) -> Result<Vec<StorageLine>> {
        let max_bits = precisions
            .iter()
            .copied()
            .max()
            .ok_or_else(|| Error::Config("no precisions given".into()))?;
        let tq = self.truncquant_bytes(max_bits)?;
        let rows = [
            (Strategy::Dedicated, self.dedicated_bytes(precisions)?),
            (Strategy::OfaFp32Parent, self.fp32_bytes()),
            (Strategy::TruncQuant, tq),
        ];
        Ok(rows
            .into_iter()
            .map(|(strategy, bytes)| StorageLine {
                strategy,
                bytes,
                ratio_to_truncquant: bytes / tq,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageLine {
    pub strategy: Strategy,
    pub bytes: f64,
    pub ratio_to_truncquant: f64,
}
