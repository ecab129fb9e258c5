use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::keyed_rng;

/// Row-major feature matrix with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if num_features == 0 || num_classes == 0 {
            return Err(Error::invalid("dataset needs at least one feature and one class"));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::invalid(format!(
                "{} feature values do not form {} rows of {num_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }
}

/// Gaussian blobs around random class centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub features: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Norm of every class center.
    pub center_norm: f64,
    pub noise_std: f64,
    /// Clip each noise vector to 45% of the smallest center distance, so every
    /// point is strictly nearer its own center and the classes are linearly
    /// separable with a margin.
    pub separable: bool,
    pub seed: u64,
}

/// Train/test split of a blob dataset, reproducible from its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
    pub num_classes: usize,
}

impl BlobSpec {
    pub fn generate(&self) -> Result<SyntheticDataset> {
        if self.classes == 0 || self.features == 0 {
            return Err(Error::invalid("blobs need at least one class and one feature"));
        }
        if !(self.noise_std >= 0.0) || !(self.center_norm >= 0.0) {
            return Err(Error::invalid("blob scales must be nonnegative"));
        }
        let mut rng = keyed_rng(self.seed, &[0]);
        let centers: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.features).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x * self.center_norm / norm).collect()
            })
            .collect();

        let mut min_dist = f64::INFINITY;
        for a in 0..self.classes {
            for b in a + 1..self.classes {
                let d = centers[a]
                    .iter()
                    .zip(&centers[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(d);
            }
        }
        let clip = if self.separable && min_dist.is_finite() {
            Some(0.45 * min_dist)
        } else {
            None
        };

        let sample = |per_class: usize, stream: u64| -> Result<Dataset> {
            let mut rng = keyed_rng(self.seed, &[stream]);
            let mut features = Vec::with_capacity(per_class * self.classes * self.features);
            let mut labels = Vec::with_capacity(per_class * self.classes);
            for (class, center) in centers.iter().enumerate() {
                for _ in 0..per_class {
                    let mut noise: Vec<f64> = (0..self.features)
                        .map(|_| self.noise_std * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    if let Some(limit) = clip {
                        let norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > limit {
                            noise.iter_mut().for_each(|x| *x *= limit / norm);
                        }
                    }
                    features.extend(center.iter().zip(&noise).map(|(c, n)| c + n));
                    labels.push(class);
                }
            }
            Dataset::new(features, labels, self.features, self.classes)
        };

        Ok(SyntheticDataset {
            train: sample(self.train_per_class, 1)?,
            test: sample(self.test_per_class, 2)?,
            seed: self.seed,
            num_classes: self.classes,
        })
    }
}
