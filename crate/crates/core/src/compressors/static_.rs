use std::sync::Arc;

use super::{add_into, apply_step, check_payload, compress_into, ClientState, Sketch, SubspaceTag};
use crate::error::{check_len, Error, Result};
use crate::projection::{Projection, SharedProjection};

/// Server of the static protocol: one fixed subspace, one accumulator.
///
/// The server parameters are always `θ₀ + A·Σ`.
#[derive(Clone, Debug)]
pub struct StaticServer {
    projection: SharedProjection,
    theta0: Arc<Vec<f64>>,
    sigma: Vec<f64>,
    steps: u64,
}

impl StaticServer {
    pub fn new(projection: SharedProjection, theta0: Arc<Vec<f64>>) -> Result<Self> {
        check_len(projection.big_dim(), theta0.len())?;
        let sigma = vec![0.0; projection.small_dim()];
        Ok(Self {
            projection,
            theta0,
            sigma,
            steps: 0,
        })
    }

    pub fn projection(&self) -> &SharedProjection {
        &self.projection
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// The `d` floats a client downloads.
    pub fn download(&self) -> Vec<f64> {
        self.sigma.clone()
    }

    /// `Σ ← Σ − η·mean(payloads)`.
    pub fn step(&mut self, sketches: &[Sketch], lr: f64) -> Result<()> {
        if sketches.is_empty() {
            return Err(Error::Protocol("server step with no sketches".into()));
        }
        let mut sum = vec![0.0; self.sigma.len()];
        for s in sketches {
            if s.tag != SubspaceTag::Static {
                return Err(Error::Protocol(format!("static server got {:?} sketch", s.tag)));
            }
            check_payload(s, self.sigma.len())?;
            add_into(&mut sum, &s.payload);
        }
        apply_step(&mut self.sigma, &sum, lr, sketches.len());
        self.steps += 1;
        Ok(())
    }

    /// Materializes `θ₀ + A·Σ`.
    pub fn parameters(&self) -> Result<Vec<f64>> {
        let mut theta = self.theta0.to_vec();
        self.projection.forward_add(&self.sigma, &mut theta)?;
        Ok(theta)
    }
}

/// Sets the client's parameters to `θ₀ + A·Σ` from the downloaded `Σ`.
pub fn static_reconcile(
    client: &mut ClientState,
    projection: &dyn Projection,
    theta0: &[f64],
    download: &[f64],
) -> Result<()> {
    check_len(projection.small_dim(), download.len())?;
    let mut theta = theta0.to_vec();
    projection.forward_add(download, &mut theta)?;
    client.theta = theta;
    Ok(())
}

/// `S = Aᵀg`.
pub fn static_compress(client: usize, projection: &dyn Projection, grad: &[f64]) -> Result<Sketch> {
    compress_into(client, projection, grad, SubspaceTag::Static)
}
