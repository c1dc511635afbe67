//! Model checkpoints as TQT1 containers.
//!
//! Layer `i` is stored as `layers.{i}.weight` (`out x in`) and
//! `layers.{i}.bias`. Weights of fake-quantized layers carry the training
//! scheme and the normalization parameters frozen at export time; they may
//! also be replaced by integer bins, in which case the checkpoint is pinned
//! to that precision.

use truncquant_core::qat::{DenseLayer, MlpModel};
use truncquant_core::quant::dequantize;
use truncquant_core::tensor::{denormalize, fit_params};
use truncquant_core::{NormMode, Scheme, Tensor};

use crate::format::{FloatRecord, NamedRecord, TensorRecord};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("missing record {0}")]
    Missing(String),
    #[error("record {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error(transparent)]
    Core(#[from] truncquant_core::Error),
}

fn weight_name(i: usize) -> String {
    format!("layers.{i}.weight")
}

fn bias_name(i: usize) -> String {
    format!("layers.{i}.bias")
}

/// Exports float master weights; normalization of quantized layers is
/// fitted to the current weights and frozen into the record.
pub fn to_records(model: &MlpModel) -> Result<Vec<NamedRecord>, CheckpointError> {
    let mut out = Vec::with_capacity(model.layers.len() * 2);
    for (i, layer) in model.layers.iter().enumerate() {
        let weight = if layer.quantize {
            FloatRecord {
                tensor: layer.weight_tensor(),
                scheme: Some(model.scheme),
                norm: Some(fit_params(&layer.weights, model.norm_mode)?),
            }
        } else {
            FloatRecord::raw(layer.weight_tensor())
        };
        out.push(NamedRecord {
            name: weight_name(i),
            record: TensorRecord::Float(weight),
        });
        out.push(NamedRecord {
            name: bias_name(i),
            record: TensorRecord::Float(FloatRecord::raw(Tensor::from_vec(layer.bias.clone()))),
        });
    }
    Ok(out)
}

/// A model read back from a checkpoint.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: MlpModel,
    /// Precision of the integer bins, when quantized layers hold bins
    /// instead of float weights. Such layers are loaded already
    /// dequantized and should be evaluated in full-precision mode.
    pub frozen_bits: Option<u32>,
}

pub fn from_records(records: &[NamedRecord]) -> Result<LoadedModel, CheckpointError> {
    let find = |name: &str| {
        records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.record)
            .ok_or_else(|| CheckpointError::Missing(name.to_owned()))
    };
    let invalid = |name: String, reason: &str| CheckpointError::Invalid {
        name,
        reason: reason.to_owned(),
    };

    let mut layers = Vec::new();
    let mut scheme: Option<Scheme> = None;
    let mut norm_mode: Option<NormMode> = None;
    let mut frozen_bits: Option<u32> = None;
    let mut any_float_quantized = false;

    let mut i = 0;
    while records.iter().any(|r| r.name == weight_name(i)) {
        let wname = weight_name(i);
        let weight = find(&wname)?;
        let [out_dim, in_dim] = *weight.dims() else {
            return Err(invalid(wname, "weights must be two-dimensional"));
        };
        let bias = match find(&bias_name(i))? {
            TensorRecord::Float(f) if f.tensor.len() == out_dim => f.tensor.values().to_vec(),
            _ => {
                return Err(invalid(
                    bias_name(i),
                    "bias must be a float vector of length out_dim",
                ))
            }
        };
        let (values, quantize, layer_scheme, mode) = match weight {
            TensorRecord::Float(f) => match f.scheme {
                Some(s) => {
                    any_float_quantized = true;
                    let mode = f.norm.map(|p| p.mode);
                    (f.tensor.values().to_vec(), true, Some(s), mode)
                }
                None => (f.tensor.values().to_vec(), false, None, None),
            },
            TensorRecord::Quantized(q) => {
                if frozen_bits.is_some_and(|b| b != q.bits()) {
                    return Err(invalid(wname, "quantized layers disagree on bit width"));
                }
                frozen_bits = Some(q.bits());
                let w = denormalize(&dequantize(q), q.norm())?;
                (w.into_values(), true, Some(q.scheme()), Some(q.norm().mode))
            }
        };
        if let Some(s) = layer_scheme {
            if scheme.is_some_and(|prev| prev != s) {
                return Err(invalid(weight_name(i), "layers disagree on scheme"));
            }
            scheme = Some(s);
        }
        if let Some(m) = mode {
            norm_mode = Some(m);
        }
        layers.push(DenseLayer::new(in_dim, out_dim, values, bias, quantize)?);
        i += 1;
    }
    if layers.is_empty() {
        return Err(CheckpointError::Missing(weight_name(0)));
    }
    if frozen_bits.is_some() && any_float_quantized {
        return Err(invalid(
            "checkpoint".into(),
            "mixes float and integer weights for quantized layers",
        ));
    }
    let model = MlpModel::from_layers(
        layers,
        scheme.unwrap_or(Scheme::Uniform),
        norm_mode.unwrap_or(NormMode::DorefaTanh),
    )?;
    Ok(LoadedModel { model, frozen_bits })
}
