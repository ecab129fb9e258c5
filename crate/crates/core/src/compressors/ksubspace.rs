use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{add_into, apply_step, check_payload, compress_into, ClientState, Sketch, SubspaceTag};
use crate::error::{check_len, Error, Result};
use crate::projection::{Projection, SharedProjection};

/// Server of the K-subspace protocol: `K` fixed subspaces, each with its own
/// accumulator. Parameters are `θ₀ + Σ_k A⁽ᵏ⁾·Σ⁽ᵏ⁾`.
#[derive(Clone, Debug)]
pub struct KSubspaceServer {
    projections: Vec<SharedProjection>,
    theta0: Arc<Vec<f64>>,
    sigmas: Vec<Vec<f64>>,
    steps: u64,
}

impl KSubspaceServer {
    pub fn new(projections: Vec<SharedProjection>, theta0: Arc<Vec<f64>>) -> Result<Self> {
        let Some(first) = projections.first() else {
            return Err(Error::invalid("K-subspace needs K >= 1"));
        };
        let small_dim = first.small_dim();
        for a in &projections {
            check_len(theta0.len(), a.big_dim())?;
            check_len(small_dim, a.small_dim())?;
        }
        let sigmas = vec![vec![0.0; small_dim]; projections.len()];
        Ok(Self {
            projections,
            theta0,
            sigmas,
            steps: 0,
        })
    }

    pub fn subspaces(&self) -> usize {
        self.projections.len()
    }

    pub fn projections(&self) -> &[SharedProjection] {
        &self.projections
    }

    pub fn sigmas(&self) -> &[Vec<f64>] {
        &self.sigmas
    }

    /// All `K` accumulators, `d·K` floats.
    pub fn download(&self) -> Vec<Vec<f64>> {
        self.sigmas.clone()
    }

    /// `Σ⁽ᵏ⁾ ← Σ⁽ᵏ⁾ − (η/W)·Σ_{j_w = k} C_w` where `W` counts every sketch of
    /// the round, not just those in bucket `k`. Untouched buckets are left as is.
    pub fn step(&mut self, sketches: &[Sketch], lr: f64) -> Result<()> {
        if sketches.is_empty() {
            return Err(Error::Protocol("server step with no sketches".into()));
        }
        let k_total = self.subspaces();
        let small_dim = self.sigmas[0].len();
        let mut sums: Vec<Option<Vec<f64>>> = vec![None; k_total];
        for s in sketches {
            let SubspaceTag::Subspace(k) = s.tag else {
                return Err(Error::Protocol(format!("K-subspace server got {:?} sketch", s.tag)));
            };
            if k >= k_total {
                return Err(Error::Protocol(format!("subspace tag {k} out of range for K={k_total}")));
            }
            check_payload(s, small_dim)?;
            add_into(sums[k].get_or_insert_with(|| vec![0.0; small_dim]), &s.payload);
        }
        for (sigma, sum) in self.sigmas.iter_mut().zip(&sums) {
            if let Some(sum) = sum {
                apply_step(sigma, sum, lr, sketches.len());
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn parameters(&self) -> Result<Vec<f64>> {
        let mut theta = self.theta0.to_vec();
        for (a, sigma) in self.projections.iter().zip(&self.sigmas) {
            a.forward_add(sigma, &mut theta)?;
        }
        Ok(theta)
    }
}

/// Uniform subspace index in `0..K`.
pub fn ksub_assign(rng: &mut dyn RngCore, subspaces: usize) -> usize {
    assert!(subspaces >= 1, "K must be at least 1");
    rng.random_range(0..subspaces)
}

/// Sets the client's parameters to `θ₀ + Σ_k A⁽ᵏ⁾·Σ⁽ᵏ⁾`.
pub fn ksub_reconcile(
    client: &mut ClientState,
    projections: &[SharedProjection],
    theta0: &[f64],
    downloads: &[Vec<f64>],
) -> Result<()> {
    if downloads.len() != projections.len() {
        return Err(Error::Protocol(format!(
            "K-subspace reconcile got {} accumulators, expected {}",
            downloads.len(),
            projections.len()
        )));
    }
    let mut theta = theta0.to_vec();
    for (a, sigma) in projections.iter().zip(downloads) {
        a.forward_add(sigma, &mut theta)?;
    }
    client.theta = theta;
    Ok(())
}

/// `(k, A⁽ᵏ⁾ᵀ g)`.
pub fn ksub_compress(
    client: usize,
    projection: &dyn Projection,
    k: usize,
    grad: &[f64],
) -> Result<Sketch> {
    compress_into(client, projection, grad, SubspaceTag::Subspace(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressors::{static_compress, static_reconcile, StaticServer};
    use crate::projection::FastfoodMatrix;
    use crate::rng::keyed_rng;

    fn projections(k: usize, small: usize) -> Vec<SharedProjection> {
        (0..k)
            .map(|i| Arc::new(FastfoodMatrix::new(100 + i as u64, 32, small).unwrap()) as SharedProjection)
            .collect()
    }

    fn sketch(k: usize, payload: Vec<f64>) -> Sketch {
        Sketch { payload, tag: SubspaceTag::Subspace(k) }
    }

    #[test]
    fn assignment_degenerate_uniform_and_deterministic() {
        let mut rng = keyed_rng(1, &[2]);
        assert!((0..100).all(|_| ksub_assign(&mut rng, 1) == 0));

        let mut rng = keyed_rng(5, &[0]);
        let n = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[ksub_assign(&mut rng, 4)] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.25).abs() <= 3.0 * sigma, "{counts:?}");
        }

        let draw = || ksub_assign(&mut keyed_rng(9, &[3, 7]), 8);
        assert_eq!(draw(), draw());
    }

    #[test]
    fn bucket_updates_use_total_count() {
        let theta0 = Arc::new(vec![0.0; 32]);
        let (p, q) = (vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.5, 0.0, 2.0]);

        let mut s = KSubspaceServer::new(projections(2, 4), theta0.clone()).unwrap();
        s.step(&[sketch(0, p.clone()), sketch(0, q.clone())], 0.2).unwrap();
        for j in 0..4 {
            assert!((s.sigmas()[0][j] + 0.2 * (p[j] + q[j]) / 2.0).abs() < 1e-15);
        }
        assert_eq!(s.sigmas()[1], vec![0.0; 4]);

        let mut s = KSubspaceServer::new(projections(2, 4), theta0).unwrap();
        s.step(&[sketch(0, p.clone()), sketch(1, q.clone())], 0.2).unwrap();
        for j in 0..4 {
            assert!((s.sigmas()[0][j] + 0.2 * p[j] / 2.0).abs() < 1e-15);
            assert!((s.sigmas()[1][j] + 0.2 * q[j] / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn protocol_errors() {
        let theta0 = Arc::new(vec![0.0; 32]);
        let mut s = KSubspaceServer::new(projections(2, 4), theta0.clone()).unwrap();
        assert!(matches!(s.step(&[sketch(2, vec![0.0; 4])], 0.1), Err(Error::Protocol(_))));
        let mut c = ClientState::new(0, &theta0, 1, 4);
        let missing = vec![vec![0.0; 4]];
        assert!(matches!(
            ksub_reconcile(&mut c, &projections(2, 4), &theta0, &missing),
            Err(Error::Protocol(_))
        ));
        assert!(KSubspaceServer::new(vec![], theta0).is_err());
    }

    #[test]
    fn zero_accumulators_reconcile_to_theta0() {
        let theta0: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let mut c = ClientState::new(0, &theta0, 1, 4);
        c.theta = vec![0.0; 32];
        ksub_reconcile(&mut c, &projections(3, 4), &theta0, &vec![vec![0.0; 4]; 3]).unwrap();
        assert_eq!(c.theta, theta0);
    }

    #[test]
    fn single_subspace_is_bitwise_static() {
        let theta0 = Arc::new((0..32).map(|i| (i as f64 * 0.7).sin()).collect::<Vec<_>>());
        let a = projections(1, 4);
        let mut ks = KSubspaceServer::new(a.clone(), theta0.clone()).unwrap();
        let mut st = StaticServer::new(a[0].clone(), theta0.clone()).unwrap();
        for round in 0..6 {
            let grads: Vec<Vec<f64>> = (0..3)
                .map(|c| (0..32).map(|i| ((round * 7 + c * 3 + i) as f64).cos()).collect())
                .collect();
            let kss: Vec<Sketch> = grads.iter().map(|g| ksub_compress(0, a[0].as_ref(), 0, g).unwrap()).collect();
            let sts: Vec<Sketch> = grads.iter().map(|g| static_compress(0, a[0].as_ref(), g).unwrap()).collect();
            ks.step(&kss, 0.05).unwrap();
            st.step(&sts, 0.05).unwrap();
            assert_eq!(ks.sigmas()[0], st.sigma());
        }
        assert_eq!(ks.parameters().unwrap(), st.parameters().unwrap());
        let mut c1 = ClientState::new(0, &theta0, 1, 4);
        let mut c2 = c1.clone();
        ksub_reconcile(&mut c1, &a, &theta0, &ks.download()).unwrap();
        static_reconcile(&mut c2, a[0].as_ref(), &theta0, &st.download()).unwrap();
        assert_eq!(c1.theta, c2.theta);
    }
}
