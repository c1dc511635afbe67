use alloc::string::String;

/// Errors produced by the quantization, analysis and training routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("tensor is empty")]
    Empty,

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("value {value} at index {index} lies outside [0, 1]")]
    OutOfUnitRange { index: usize, value: f32 },

    #[error("bit width {0} is outside the supported range 1..=16")]
    BitWidth(u32),

    #[error("cannot go from {from}-bit to {to}-bit precision")]
    PrecisionOrder { from: u32, to: u32 },

    #[error("bin {bin} does not fit in {bits} bits")]
    BinRange { bin: u32, bits: u32 },

    #[error("shape mismatch: expected {expected} elements, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("dims {dims:?} describe {expected} elements but payload holds {found}")]
    Dims {
        dims: alloc::vec::Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f32 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
