use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{argmax, softmax_inplace, Dataset, GradientOracle, LossAndGrad};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, DOMAIN_INIT};

/// One-hidden-layer tanh network with a softmax cross-entropy head.
///
/// Flattened layout: `W1` (`H × F`, row-major), `b1` (`H`), `W2` (`C × H`),
/// `b2` (`C`).
#[derive(Clone, Debug)]
pub struct MlpModel {
    train: Arc<Dataset>,
    test: Arc<Dataset>,
    inputs: usize,
    hidden: usize,
    classes: usize,
}

struct Forward {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl MlpModel {
    /// `layer_sizes` must be `[inputs, hidden, classes]`, consistent with the data.
    pub fn new(layer_sizes: &[usize], train: Arc<Dataset>, test: Arc<Dataset>) -> Result<Self> {
        let &[inputs, hidden, classes] = layer_sizes else {
            return Err(Error::invalid(format!(
                "MLP takes exactly one hidden layer, got layer sizes {layer_sizes:?}"
            )));
        };
        if hidden == 0 {
            return Err(Error::invalid("hidden layer must be non-empty"));
        }
        if inputs != train.num_features() || classes != train.num_classes() {
            return Err(Error::invalid(format!(
                "layer sizes {layer_sizes:?} do not match data with {} features and {} classes",
                train.num_features(),
                train.num_classes()
            )));
        }
        Ok(Self {
            train,
            test,
            inputs,
            hidden,
            classes,
        })
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.inputs;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        (w1, b1, w2)
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Forward {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let (w1, b1) = (&theta[..w1_end], &theta[w1_end..b1_end]);
        let (w2, b2) = (&theta[b1_end..w2_end], &theta[w2_end..]);
        let hidden: Vec<f64> = w1
            .chunks_exact(self.inputs)
            .zip(b1)
            .map(|(row, b)| (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).tanh())
            .collect();
        let logits = w2
            .chunks_exact(self.hidden)
            .zip(b2)
            .map(|(row, b)| row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + b)
            .collect();
        Forward { hidden, logits }
    }

    fn batch_loss(&self, theta: &[f64], batch: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let (w1_end, b1_end, w2_end) = self.offsets();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in batch {
            let x = self.train.row(i);
            let y = self.train.labels()[i];
            let Forward { hidden, logits } = self.forward(theta, x);
            let mut probs = logits.clone();
            let lse = softmax_inplace(&mut probs);
            loss += lse - logits[y];

            let Some(g) = grad.as_deref_mut() else { continue };
            let dz: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(c, p)| (p - if c == y { 1.0 } else { 0.0 }) * scale)
                .collect();
            let w2 = &theta[b1_end..w2_end];
            let mut dh = vec![0.0; self.hidden];
            for (c, &r) in dz.iter().enumerate() {
                let row = c * self.hidden;
                for j in 0..self.hidden {
                    g[b1_end + row + j] += r * hidden[j];
                    dh[j] += r * w2[row + j];
                }
                g[w2_end + c] += r;
            }
            for j in 0..self.hidden {
                let da = dh[j] * (1.0 - hidden[j] * hidden[j]);
                let row = j * self.inputs;
                for (k, xv) in x.iter().enumerate() {
                    g[row + k] += da * xv;
                }
                g[w1_end + j] += da;
            }
        }
        loss * scale
    }
}

impl GradientOracle for MlpModel {
    fn dim(&self) -> usize {
        self.hidden * (self.inputs + 1) + self.classes * (self.hidden + 1)
    }

    fn loss_and_grad(&self, theta: &[f64], batch: &[usize], _rng: &mut dyn RngCore) -> LossAndGrad {
        let mut grad = vec![0.0; self.dim()];
        let loss = self.batch_loss(theta, batch, Some(&mut grad));
        LossAndGrad { loss, grad }
    }

    fn loss(&self, theta: &[f64], batch: &[usize]) -> f64 {
        self.batch_loss(theta, batch, None)
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        if self.test.is_empty() {
            return 0.0;
        }
        let correct = (0..self.test.len())
            .filter(|&i| argmax(&self.forward(theta, self.test.row(i)).logits) == self.test.labels()[i])
            .count();
        correct as f64 / self.test.len() as f64
    }

    fn metric_name(&self) -> &'static str {
        "accuracy"
    }

    fn training_labels(&self) -> Option<&[usize]> {
        Some(self.train.labels())
    }

    /// Gaussian weights with `1/√fan_in` scale, zero biases.
    fn initial_parameters(&self, seed: u64) -> Vec<f64> {
        let mut rng = keyed_rng(seed, &[DOMAIN_INIT]);
        let (w1_end, b1_end, w2_end) = self.offsets();
        let mut theta = vec![0.0; self.dim()];
        let s1 = 1.0 / (self.inputs as f64).sqrt();
        let s2 = 1.0 / (self.hidden as f64).sqrt();
        for v in &mut theta[..w1_end] {
            *v = s1 * rng.sample::<f64, _>(StandardNormal);
        }
        for v in &mut theta[b1_end..w2_end] {
            *v = s2 * rng.sample::<f64, _>(StandardNormal);
        }
        theta
    }
}
