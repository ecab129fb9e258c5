//! Uncompressed SGD, local Top-K and FedAvg.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{add_into, apply_step, ensure_finite};
use crate::error::{check_len, Error, Result};
use crate::models::GradientOracle;

/// Server holding dense parameters (uncompressed SGD and FedAvg).
#[derive(Clone, Debug)]
pub struct DenseServer {
    theta: Vec<f64>,
}

impl DenseServer {
    pub fn new(theta0: Vec<f64>) -> Self {
        Self { theta: theta0 }
    }

    pub fn parameters(&self) -> &[f64] {
        &self.theta
    }

    /// `θ ← θ − η·mean(grads)`.
    pub fn step_gradients(&mut self, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        let sum = self.sum(grads)?;
        apply_step(&mut self.theta, &sum, lr, grads.len());
        Ok(())
    }

    /// `θ ← θ + mean(deltas)`.
    pub fn apply_deltas(&mut self, deltas: &[Vec<f64>]) -> Result<()> {
        let sum = self.sum(deltas)?;
        apply_step(&mut self.theta, &sum, -1.0, deltas.len());
        Ok(())
    }

    fn sum(&self, vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
        if vectors.is_empty() {
            return Err(Error::Protocol("server step with no updates".into()));
        }
        let mut sum = vec![0.0; self.theta.len()];
        for v in vectors {
            check_len(self.theta.len(), v.len())?;
            add_into(&mut sum, v);
        }
        Ok(sum)
    }
}

/// `k` (index, value) pairs, sorted by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseUpdate {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseUpdate {
    /// Each index is charged as one float-equivalent.
    pub fn floats(&self) -> usize {
        2 * self.indices.len()
    }
}

/// The `k` largest-magnitude entries of `grad`; ties go to the lower index.
pub fn topk_compress(client: usize, grad: &[f64], k: usize) -> Result<SparseUpdate> {
    if k == 0 || k > grad.len() {
        return Err(Error::invalid(format!(
            "top-k needs 1 <= k <= D, got k={k}, D={}",
            grad.len()
        )));
    }
    ensure_finite(client, grad)?;
    let mut order: Vec<usize> = (0..grad.len()).collect();
    let by_magnitude = |a: &usize, b: &usize| {
        grad[*b]
            .abs()
            .total_cmp(&grad[*a].abs())
            .then_with(|| a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_magnitude);
        order.truncate(k);
    }
    order.sort_unstable();
    Ok(SparseUpdate {
        values: order.iter().map(|&i| grad[i]).collect(),
        indices: order,
    })
}

/// Server for local Top-K: dense parameters plus, per coordinate, the round
/// that last modified it, so a client downloads only what changed since it
/// last synced.
#[derive(Clone, Debug)]
pub struct TopKServer {
    theta: Vec<f64>,
    modified: Vec<u64>,
    round: u64,
}

impl TopKServer {
    pub fn new(theta0: Vec<f64>) -> Self {
        let modified = vec![0; theta0.len()];
        Self {
            theta: theta0,
            modified,
            round: 0,
        }
    }

    pub fn parameters(&self) -> &[f64] {
        &self.theta
    }

    /// Number of completed server steps.
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Download cost for a client last synced after round `synced`: changed
    /// coordinates as (index, value) pairs, or the dense vector if smaller.
    pub fn download_floats(&self, synced: u64) -> usize {
        let changed = self.modified.iter().filter(|&&r| r > synced).count();
        (2 * changed).min(self.theta.len())
    }

    /// `θ_i ← θ_i − η·(Σ_w v_{w,i})/W` over the union of reported indices.
    pub fn step(&mut self, updates: &[SparseUpdate], lr: f64) -> Result<()> {
        if updates.is_empty() {
            return Err(Error::Protocol("server step with no updates".into()));
        }
        self.round += 1;
        let mut sum = vec![0.0; self.theta.len()];
        let mut touched = vec![false; self.theta.len()];
        for u in updates {
            for (&i, &v) in u.indices.iter().zip(&u.values) {
                if i >= self.theta.len() {
                    return Err(Error::Protocol(format!("sparse index {i} out of range")));
                }
                sum[i] += v;
                touched[i] = true;
            }
        }
        let w = updates.len() as f64;
        for i in (0..self.theta.len()).filter(|&i| touched[i]) {
            self.theta[i] -= lr * (sum[i] / w);
            self.modified[i] = self.round;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    /// `θ_local − θ`.
    pub delta: Vec<f64>,
    /// Mean loss over the local steps, each measured before its update.
    pub loss: f64,
}

/// Runs one local SGD step per batch starting from `theta`.
pub fn fedavg_local_update(
    oracle: &dyn GradientOracle,
    theta: &[f64],
    batches: &[Vec<usize>],
    lr: f64,
    rng: &mut dyn RngCore,
) -> Result<LocalUpdate> {
    if batches.is_empty() {
        return Err(Error::invalid("FedAvg needs at least one local step"));
    }
    let mut local = theta.to_vec();
    let mut loss = 0.0;
    for batch in batches {
        let out = oracle.loss_and_grad(&local, batch, rng);
        for (t, g) in local.iter_mut().zip(&out.grad) {
            *t -= lr * g;
        }
        loss += out.loss;
    }
    Ok(LocalUpdate {
        delta: local.iter().zip(theta).map(|(l, t)| l - t).collect(),
        loss: loss / batches.len() as f64,
    })
}
