//! Gradient oracles and datasets.
//!
//! A [`GradientOracle`] maps parameters `θ ∈ R^D` and a batch of training
//! example indices to a loss and its exact gradient. Data-free oracles (the
//! quadratic) ignore the batch.

use rand::RngCore;

mod checkpoint;
mod data;
mod idx;
mod logistic;
mod mlp;
mod quadratic;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use data::{BlobSpec, Dataset, SyntheticDataset};
pub use idx::{load_idx_dataset, parse_idx_images, parse_idx_labels};
pub use logistic::LogisticModel;
pub use mlp::MlpModel;
pub use quadratic::QuadraticProblem;

#[derive(Clone, Debug, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub trait GradientOracle: Send + Sync {
    /// `D`, the flattened parameter count.
    fn dim(&self) -> usize;

    /// Loss and gradient on `batch`. Stochastic oracles draw their noise
    /// from `rng`; deterministic ones leave it untouched.
    fn loss_and_grad(&self, theta: &[f64], batch: &[usize], rng: &mut dyn RngCore) -> LossAndGrad;

    /// Noise-free loss on `batch`.
    fn loss(&self, theta: &[f64], batch: &[usize]) -> f64;

    /// Held-out metric: accuracy for classifiers, loss gap for the quadratic.
    fn evaluate(&self, theta: &[f64]) -> f64;

    fn metric_name(&self) -> &'static str;

    /// Labels of the training examples, or `None` when the oracle has no data.
    fn training_labels(&self) -> Option<&[usize]>;

    /// Random initialization `θ₀` for this model.
    fn initial_parameters(&self, seed: u64) -> Vec<f64>;
}

/// Numerically stable in-place softmax; returns `log Σ exp(z)`.
pub(crate) fn softmax_inplace(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
