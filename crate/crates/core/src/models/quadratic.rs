use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GradientOracle, LossAndGrad};
use crate::error::{check_len, Error, Result};
use crate::rng::stream_rng;

/// `g(θ) = ½ Σ λ_i (θ_i − θ*_i)²` with a diagonal, nonnegative spectrum.
///
/// The minimum is `g* = 0` at `θ*`. Gradients optionally carry additive
/// isotropic Gaussian noise of variance `noise_var` per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    spectrum: Vec<f64>,
    optimum: Vec<f64>,
    noise_var: f64,
}

impl QuadraticProblem {
    pub fn new(spectrum: Vec<f64>, optimum: Vec<f64>) -> Result<Self> {
        check_len(spectrum.len(), optimum.len())?;
        if spectrum.is_empty() {
            return Err(Error::invalid("quadratic problem needs D >= 1"));
        }
        if let Some(bad) = spectrum.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::invalid(format!(
                "spectrum entries must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self {
            spectrum,
            optimum,
            noise_var: 0.0,
        })
    }

    /// `dominant` eigenvalues equal to `dominant_value`, the remaining
    /// `dim − dominant` equal to `tail_value`; `θ*` standard normal from `seed`.
    pub fn dominant_spectrum(
        dim: usize,
        dominant: usize,
        dominant_value: f64,
        tail_value: f64,
        seed: u64,
    ) -> Result<Self> {
        if dominant > dim {
            return Err(Error::invalid(format!(
                "{dominant} dominant eigenvalues requested for D={dim}"
            )));
        }
        let spectrum = (0..dim)
            .map(|i| if i < dominant { dominant_value } else { tail_value })
            .collect();
        let mut rng = stream_rng(seed, 0);
        let optimum = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Self::new(spectrum, optimum)
    }

    pub fn with_noise(mut self, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return Err(Error::invalid(format!(
                "noise variance must be finite and nonnegative, got {noise_var}"
            )));
        }
        self.noise_var = noise_var;
        Ok(self)
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        0.5 * theta
            .iter()
            .zip(&self.optimum)
            .zip(&self.spectrum)
            .map(|((t, o), l)| l * (t - o) * (t - o))
            .sum::<f64>()
    }

    /// Exact gradient `λ ⊙ (θ − θ*)`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.optimum)
            .zip(&self.spectrum)
            .map(|((t, o), l)| l * (t - o))
            .collect()
    }

    /// `g* = 0` by construction.
    pub fn minimum(&self) -> f64 {
        0.0
    }
}

impl GradientOracle for QuadraticProblem {
    fn dim(&self) -> usize {
        self.spectrum.len()
    }

    fn loss_and_grad(&self, theta: &[f64], _batch: &[usize], rng: &mut dyn RngCore) -> LossAndGrad {
        let mut grad = self.gradient(theta);
        if self.noise_var > 0.0 {
            let std = self.noise_var.sqrt();
            for g in grad.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *g += std * z;
            }
        }
        LossAndGrad {
            loss: self.value(theta),
            grad,
        }
    }

    fn loss(&self, theta: &[f64], _batch: &[usize]) -> f64 {
        self.value(theta)
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        self.value(theta) - self.minimum()
    }

    fn metric_name(&self) -> &'static str {
        "loss_gap"
    }

    fn training_labels(&self) -> Option<&[usize]> {
        None
    }

    fn initial_parameters(&self, _seed: u64) -> Vec<f64> {
        vec![0.0; self.spectrum.len()]
    }
}
