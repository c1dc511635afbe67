use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::quant::{
    dequantize, quantize, ste_backward_in_place, QuantConfig, QuantizedTensor, Scheme,
};
use crate::tensor::{denormalize, normalize, NormMode, Tensor};
use crate::truncate::truncate;

/// Fully connected layer, `weights` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    /// Whether the weights go through the fake quantizer.
    pub quantize: bool,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        quantize: bool,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::ShapeMismatch {
                expected: in_dim * out_dim,
                found: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::ShapeMismatch {
                expected: out_dim,
                found: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            quantize,
        })
    }

    pub fn weight_tensor(&self) -> Tensor {
        Tensor::new(vec![self.out_dim, self.in_dim], self.weights.clone())
            .expect("layer shape checked on construction")
    }
}

/// Which weights the forward pass sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Float master weights.
    Full,
    /// Weights quantized directly to `bits`.
    Quant { bits: u32 },
    /// Weights quantized to `start_bits`, then truncated to `bits`.
    Trunc { bits: u32, start_bits: u32 },
}

impl WeightMode {
    fn target(self) -> Option<QuantConfig> {
        match self {
            WeightMode::Full => None,
            WeightMode::Quant { bits } | WeightMode::Trunc { bits, .. } => {
                QuantConfig::new(bits).ok()
            }
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            WeightMode::Full => Ok(()),
            WeightMode::Quant { bits } => QuantConfig::new(bits).map(drop),
            WeightMode::Trunc { bits, start_bits } => {
                QuantConfig::new(bits)?;
                QuantConfig::new(start_bits)?;
                if bits > start_bits {
                    return Err(Error::PrecisionOrder {
                        from: start_bits,
                        to: bits,
                    });
                }
                Ok(())
            }
        }
    }
}

/// Feed-forward network with ReLU hidden layers and linear logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    pub scheme: Scheme,
    pub norm_mode: NormMode,
}

impl MlpModel {
    /// He-initialized network over `sizes` (input, hidden..., output). The
    /// first and last layers stay full precision; every layer in between is
    /// fake-quantized.
    pub fn new(sizes: &[usize], scheme: Scheme, norm_mode: NormMode, seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("need at least input and output sizes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let count = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
                let normal =
                    Normal::new(0.0, std).map_err(|_| Error::Config("bad init scale".into()))?;
                let weights = (0..fan_in * fan_out)
                    .map(|_| normal.sample(&mut rng) as f32)
                    .collect();
                DenseLayer::new(
                    fan_in,
                    fan_out,
                    weights,
                    vec![0.0; fan_out],
                    i != 0 && i + 1 != count,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, scheme, norm_mode)
    }

    pub fn from_layers(
        layers: Vec<DenseLayer>,
        scheme: Scheme,
        norm_mode: NormMode,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::ShapeMismatch {
                    expected: pair[0].out_dim,
                    found: pair[1].in_dim,
                });
            }
        }
        if let Some((i, _)) = layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::NonFinite {
                index: i,
                value: f32::NAN,
            });
        }
        Ok(Self {
            layers,
            scheme,
            norm_mode,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Integer bins a quantizable layer carries under `mode`; `None` for
    /// full-precision layers or [`WeightMode::Full`].
    pub fn layer_bins(&self, idx: usize, mode: WeightMode) -> Result<Option<QuantizedTensor>> {
        mode.validate()?;
        let layer = &self.layers[idx];
        if !layer.quantize || mode == WeightMode::Full {
            return Ok(None);
        }
        let (wn, params) = normalize(&layer.weight_tensor(), self.norm_mode)?;
        let q = match mode {
            WeightMode::Full => return Ok(None),
            WeightMode::Quant { bits } => {
                quantize(&wn, QuantConfig::new(bits)?, self.scheme, params)?
            }
            WeightMode::Trunc { bits, start_bits } => {
                let high = quantize(&wn, QuantConfig::new(start_bits)?, self.scheme, params)?;
                truncate(&high, bits)?
            }
        };
        Ok(Some(q))
    }

    /// Weights the forward pass actually multiplies with.
    pub fn effective_weights(&self, idx: usize, mode: WeightMode) -> Result<Vec<f32>> {
        match self.layer_bins(idx, mode)? {
            Some(q) => Ok(denormalize(&dequantize(&q), q.norm())?.into_values()),
            None => Ok(self.layers[idx].weights.clone()),
        }
    }
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Input to each layer, `batch x in_dim`.
    inputs: Vec<Vec<f32>>,
    /// Pre-activation of each layer, `batch x out_dim`.
    pre: Vec<Vec<f32>>,
    /// Effective weights used by each layer.
    weights: Vec<Vec<f32>>,
    mode: WeightMode,
}

impl ForwardCache {
    pub fn effective_weights(&self) -> &[Vec<f32>] {
        &self.weights
    }
}

/// Runs `batch` rows of `inputs` (row-major `batch x input_dim`) through the
/// network and returns the logits.
pub fn forward(
    model: &MlpModel,
    inputs: &[f32],
    batch: usize,
    mode: WeightMode,
) -> Result<(Vec<f32>, ForwardCache)> {
    mode.validate()?;
    if inputs.len() != batch * model.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: batch * model.input_dim(),
            found: inputs.len(),
        });
    }
    let last = model.layers.len() - 1;
    let mut cache = ForwardCache {
        batch,
        inputs: Vec::with_capacity(model.layers.len()),
        pre: Vec::with_capacity(model.layers.len()),
        weights: Vec::with_capacity(model.layers.len()),
        mode,
    };
    let mut act = inputs.to_vec();
    for (idx, layer) in model.layers.iter().enumerate() {
        let w = model.effective_weights(idx, mode)?;
        let mut z = vec![0.0f32; batch * layer.out_dim];
        for r in 0..batch {
            let x = &act[r * layer.in_dim..(r + 1) * layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let dot: f32 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                z[r * layer.out_dim + o] = dot + layer.bias[o];
            }
        }
        let next = if idx == last {
            z.clone()
        } else {
            z.iter().map(|&v| v.max(0.0)).collect()
        };
        cache.inputs.push(act);
        cache.pre.push(z);
        cache.weights.push(w);
        act = next;
    }
    Ok((act, cache))
}

/// Parameter gradients, same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
}

/// Backpropagates `loss_grad` (gradient w.r.t. the logits) through the
/// cached forward pass. The weight gradient of every fake-quantized layer is
/// passed through the straight-through estimator for `scheme` at the
/// forward pass's target precision.
pub fn backward(
    model: &MlpModel,
    cache: &ForwardCache,
    loss_grad: &[f32],
    scheme: Scheme,
) -> Result<Gradients> {
    let batch = cache.batch;
    if cache.pre.len() != model.layers.len() {
        return Err(Error::ShapeMismatch {
            expected: model.layers.len(),
            found: cache.pre.len(),
        });
    }
    if loss_grad.len() != batch * model.output_dim() {
        return Err(Error::ShapeMismatch {
            expected: batch * model.output_dim(),
            found: loss_grad.len(),
        });
    }
    let n = model.layers.len();
    let mut dw = vec![Vec::new(); n];
    let mut db = vec![Vec::new(); n];
    let mut upstream = loss_grad.to_vec();
    for idx in (0..n).rev() {
        let layer = &model.layers[idx];
        let (i_dim, o_dim) = (layer.in_dim, layer.out_dim);
        // dz = upstream * relu'(z), except on the output layer.
        let dz: Vec<f32> = if idx == n - 1 {
            upstream
        } else {
            upstream
                .iter()
                .zip(&cache.pre[idx])
                .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                .collect()
        };
        let x = &cache.inputs[idx];
        let mut gw = vec![0.0f32; o_dim * i_dim];
        let mut gb = vec![0.0f32; o_dim];
        for r in 0..batch {
            for o in 0..o_dim {
                let g = dz[r * o_dim + o];
                gb[o] += g;
                let row = &mut gw[o * i_dim..(o + 1) * i_dim];
                for (w, &xi) in row.iter_mut().zip(&x[r * i_dim..(r + 1) * i_dim]) {
                    *w += g * xi;
                }
            }
        }
        if layer.quantize {
            if let Some(cfg) = cache.mode.target() {
                ste_backward_in_place(&mut gw, cfg, scheme);
            }
        }
        if idx > 0 {
            let w = &cache.weights[idx];
            let mut dx = vec![0.0f32; batch * i_dim];
            for r in 0..batch {
                for o in 0..o_dim {
                    let g = dz[r * o_dim + o];
                    for (d, &wv) in dx[r * i_dim..(r + 1) * i_dim]
                        .iter_mut()
                        .zip(&w[o * i_dim..(o + 1) * i_dim])
                    {
                        *d += g * wv;
                    }
                }
            }
            upstream = dx;
        } else {
            upstream = Vec::new();
        }
        dw[idx] = gw;
        db[idx] = gb;
    }
    Ok(Gradients {
        weights: dw,
        biases: db,
    })
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits.
pub fn softmax_cross_entropy(logits: &[f32], labels: &[usize], classes: usize) -> (f32, Vec<f32>) {
    let batch = labels.len();
    let mut grad = vec![0.0f32; logits.len()];
    let mut loss = 0.0f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| libm::exp(f64::from(v - max))).collect();
        let sum: f64 = exps.iter().sum();
        loss -= libm::log(exps[label] / sum);
        for (c, e) in exps.iter().enumerate() {
            let p = e / sum;
            let target = if c == label { 1.0 } else { 0.0 };
            grad[r * classes + c] = ((p - target) / batch as f64) as f32;
        }
    }
    ((loss / batch as f64) as f32, grad)
}
