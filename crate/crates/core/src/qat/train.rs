use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{DatasetSpec, SyntheticDataset};
use super::mlp::{backward, forward, softmax_cross_entropy, MlpModel, WeightMode};
use crate::error::{Error, Result};
use crate::quant::Scheme;
use crate::tensor::NormMode;

/// Highest precision the toy trainer samples.
pub const MAX_TRAIN_BITS: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Input, hidden and output widths.
    pub layer_sizes: Vec<usize>,
    pub scheme: Scheme,
    /// Precisions sampled uniformly, one per step.
    pub precisions: Vec<u32>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub norm_mode: NormMode,
    pub dataset: DatasetSpec,
}

impl TrainConfig {
    /// The 2-16-16-3 blob setup.
    pub fn blobs(scheme: Scheme, precisions: Vec<u32>, seed: u64) -> Self {
        Self {
            layer_sizes: alloc::vec![2, 16, 16, 3],
            scheme,
            precisions,
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.01,
            seed,
            norm_mode: NormMode::DorefaTanh,
            dataset: DatasetSpec::blobs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.precisions.is_empty() {
            return Err(Error::Config("precision set is empty".into()));
        }
        if let Some(&n) = self
            .precisions
            .iter()
            .find(|&&n| !(1..=MAX_TRAIN_BITS).contains(&n))
        {
            return Err(Error::BitWidth(n));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config("bad layer sizes".into()));
        }
        if self.layer_sizes[0] != 2
            || self.layer_sizes[self.layer_sizes.len() - 1] != self.dataset.num_classes()
        {
            return Err(Error::Config(alloc::format!(
                "layer sizes must map 2 features to {} classes",
                self.dataset.num_classes()
            )));
        }
        Ok(())
    }
}

/// Mean loss and accuracy over the steps of one epoch that sampled `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub n_sampled: u32,
    pub loss: f32,
    pub train_acc: f32,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub log: Vec<TrainLogRow>,
}

/// Generates the configured dataset and trains on its train split.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (train_set, _) = cfg.dataset.generate(cfg.seed)?;
    train_on(cfg, &train_set)
}

/// Plain SGD, single-threaded and fully determined by `cfg.seed`.
pub fn train_on(cfg: &TrainConfig, data: &SyntheticDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty);
    }
    let mut model = MlpModel::new(&cfg.layer_sizes, cfg.scheme, cfg.norm_mode, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);

    let classes = data.num_classes();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let mut step = 0usize;
    let mut batch_x = Vec::with_capacity(cfg.batch_size * 2);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        // Per precision: (loss sum, steps, correct, samples).
        let mut stats: Vec<(u32, f64, usize, usize, usize)> = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let bits = cfg.precisions[rng.random_range(0..cfg.precisions.len())];
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&data.features()[i]);
                batch_y.push(data.labels()[i]);
            }
            let mode = WeightMode::Quant { bits };
            let (logits, cache) = forward(&model, &batch_x, chunk.len(), mode)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &batch_y, classes);
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            let correct = argmax_rows(&logits, classes)
                .zip(&batch_y)
                .filter(|(p, &y)| *p == y)
                .count();
            let grads = backward(&model, &cache, &grad, cfg.scheme)?;
            for (layer, (gw, gb)) in model
                .layers
                .iter_mut()
                .zip(grads.weights.iter().zip(&grads.biases))
            {
                for (w, g) in layer.weights.iter_mut().zip(gw) {
                    *w -= cfg.learning_rate * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(gb) {
                    *b -= cfg.learning_rate * g;
                }
            }

            match stats.iter_mut().find(|s| s.0 == bits) {
                Some(s) => {
                    s.1 += f64::from(loss);
                    s.2 += 1;
                    s.3 += correct;
                    s.4 += chunk.len();
                }
                None => stats.push((bits, f64::from(loss), 1, correct, chunk.len())),
            }
            step += 1;
        }
        stats.sort_by_key(|s| s.0);
        log.extend(
            stats
                .into_iter()
                .map(|(n, loss, steps, correct, seen)| TrainLogRow {
                    epoch,
                    n_sampled: n,
                    loss: (loss / steps as f64) as f32,
                    train_acc: correct as f32 / seen as f32,
                }),
        );
    }
    Ok(TrainOutcome { model, log })
}

fn argmax_rows(logits: &[f32], classes: usize) -> impl Iterator<Item = usize> + '_ {
    logits.chunks(classes).map(|row| {
        row.iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0
    })
}

/// Predicted class for every sample.
pub fn predict(model: &MlpModel, data: &SyntheticDataset, mode: WeightMode) -> Result<Vec<usize>> {
    let (logits, _) = forward(model, &data.flat_features(), data.len(), mode)?;
    Ok(argmax_rows(&logits, model.output_dim()).collect())
}

/// Top-1 accuracy under `mode`.
pub fn evaluate(model: &MlpModel, data: &SyntheticDataset, mode: WeightMode) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty);
    }
    let correct = predict(model, data, mode)?
        .into_iter()
        .zip(data.labels())
        .filter(|(p, &y)| *p == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
