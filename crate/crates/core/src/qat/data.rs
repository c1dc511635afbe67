use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Labelled 2-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    features: Vec<[f32; 2]>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl SyntheticDataset {
    pub fn new(features: Vec<[f32; 2]>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: features.len(),
                found: labels.len(),
            });
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::Config("label exceeds class count".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &[[f32; 2]] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row-major `len x 2` feature matrix.
    pub fn flat_features(&self) -> Vec<f32> {
        self.features.iter().flatten().copied().collect()
    }
}

/// Recipe for a train/test pair of synthetic datasets.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Isotropic Gaussian blobs centered on a circle, evenly spaced in angle.
    Blobs {
        classes: usize,
        radius: f64,
        sigma: f64,
        train: usize,
        test: usize,
    },
    /// Two interleaved half circles.
    Moons {
        noise: f64,
        train: usize,
        test: usize,
    },
}

impl DatasetSpec {
    /// Three blobs on the unit circle, sigma 0.3, 3000 train / 600 test.
    pub fn blobs() -> Self {
        DatasetSpec::Blobs {
            classes: 3,
            radius: 1.0,
            sigma: 0.3,
            train: 3000,
            test: 600,
        }
    }

    pub fn moons() -> Self {
        DatasetSpec::Moons {
            noise: 0.1,
            train: 3000,
            test: 600,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSpec::Blobs { classes, .. } => *classes,
            DatasetSpec::Moons { .. } => 2,
        }
    }

    /// Train and test splits, each drawn from its own stream of `seed`.
    pub fn generate(&self, seed: u64) -> Result<(SyntheticDataset, SyntheticDataset)> {
        let (train, test) = match self {
            DatasetSpec::Blobs { train, test, .. } | DatasetSpec::Moons { train, test, .. } => {
                (*train, *test)
            }
        };
        Ok((self.sample(seed, 0, train)?, self.sample(seed, 1, test)?))
    }

    fn sample(&self, seed: u64, stream: u64, count: usize) -> Result<SyntheticDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let classes = self.num_classes();
        if classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let mut features = Vec::with_capacity(count);
        // Round-robin labels keep classes balanced to within one sample.
        let labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
        for &label in &labels {
            let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
            let point = match *self {
                DatasetSpec::Blobs { radius, sigma, .. } => {
                    let angle = 2.0 * PI * label as f64 / classes as f64;
                    let (s, c) = libm::sincos(angle);
                    let (dx, dy) = (gauss(), gauss());
                    [radius * c + sigma * dx, radius * s + sigma * dy]
                }
                DatasetSpec::Moons { noise, .. } => {
                    let t = PI * rng.random::<f64>();
                    let (s, c) = libm::sincos(t);
                    let base = if label == 0 {
                        [c, s]
                    } else {
                        [1.0 - c, 0.5 - s]
                    };
                    let n0: f64 = StandardNormal.sample(&mut rng);
                    let n1: f64 = StandardNormal.sample(&mut rng);
                    [base[0] + noise * n0, base[1] + noise * n1]
                }
            };
            features.push([point[0] as f32, point[1] as f32]);
        }
        SyntheticDataset::new(features, labels, classes)
    }
}
