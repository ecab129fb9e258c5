use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{argmax, softmax_inplace, Dataset, GradientOracle, LossAndGrad};
use crate::rng::keyed_rng;

/// Multinomial logistic regression (softmax cross-entropy).
///
/// Parameters are the row-major `C × (F + 1)` weight matrix; the last column
/// of each row is the class bias.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    train: Arc<Dataset>,
    test: Arc<Dataset>,
}

impl LogisticModel {
    pub fn new(train: Arc<Dataset>, test: Arc<Dataset>) -> Self {
        Self { train, test }
    }

    fn stride(&self) -> usize {
        self.train.num_features() + 1
    }

    fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let stride = self.stride();
        theta
            .chunks_exact(stride)
            .map(|row| row[..stride - 1].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[stride - 1])
            .collect()
    }

    fn batch_loss(&self, theta: &[f64], batch: &[usize], grad: Option<&mut [f64]>) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let stride = self.stride();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = grad;
        for &i in batch {
            let x = self.train.row(i);
            let y = self.train.labels()[i];
            let logits = self.logits(theta, x);
            let mut probs = logits.clone();
            let lse = softmax_inplace(&mut probs);
            loss += lse - logits[y];
            if let Some(g) = grad.as_deref_mut() {
                for (c, p) in probs.iter().enumerate() {
                    let residual = (p - if c == y { 1.0 } else { 0.0 }) * scale;
                    let row = &mut g[c * stride..(c + 1) * stride];
                    for (gw, xv) in row[..stride - 1].iter_mut().zip(x) {
                        *gw += residual * xv;
                    }
                    row[stride - 1] += residual;
                }
            }
        }
        loss * scale
    }
}

impl GradientOracle for LogisticModel {
    fn dim(&self) -> usize {
        self.train.num_classes() * self.stride()
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
            .filter(|&i| argmax(&self.logits(theta, self.test.row(i))) == self.test.labels()[i])
            .count();
        correct as f64 / self.test.len() as f64
    }

    fn metric_name(&self) -> &'static str {
        "accuracy"
    }

    fn training_labels(&self) -> Option<&[usize]> {
        Some(self.train.labels())
    }

    fn initial_parameters(&self, seed: u64) -> Vec<f64> {
        let mut rng = keyed_rng(seed, &[crate::rng::DOMAIN_INIT]);
        (0..self.dim())
            .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}
