//! Intrinsic gradient compression protocols and baseline compressors.
//!
//! Each protocol splits into client-side *reconciliation* (rebuild the server
//! parameters from downloaded accumulators), client-side *compression*
//! (`S = Aᵀg`) and a server *step* that folds the sketches into its
//! accumulators with `Σ ← Σ − η·(Σ_w S_w)/W`. Server parameters are never
//! stored densely; they are `θ₀` plus projected accumulators and are only
//! materialized on demand.
//!
//! Servers sum payloads in the order given, so callers pass sketches sorted
//! by client id to keep runs bit-reproducible.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{Projection, SharedProjection, SubspaceKind};
use crate::rng::subspace_seed;

mod baselines;
mod ksubspace;
mod static_;
mod time_varying;

pub use baselines::{fedavg_local_update, topk_compress, DenseServer, SparseUpdate, TopKServer};
pub use ksubspace::{ksub_assign, ksub_compress, ksub_reconcile, KSubspaceServer};
pub use static_::{static_compress, static_reconcile, StaticServer};
pub use time_varying::{tv_compress, tv_reconcile, EpochFinal, TimeVaryingServer, TvDownload};

/// Which subspace a sketch was compressed into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubspaceTag {
    Static,
    /// Index `k` in `0..K`.
    Subspace(usize),
    /// Epoch-local subspace `k` of epoch `epoch`; plain time-varying uses `k = 0`.
    Epoch { epoch: usize, subspace: usize },
}

/// A compressed gradient `Aᵀg`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub payload: Vec<f64>,
    pub tag: SubspaceTag,
}

impl Sketch {
    pub fn floats(&self) -> usize {
        self.payload.len()
    }
}

/// Per-client protocol state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Local copy of the server parameters after the last reconcile.
    pub theta: Vec<f64>,
    /// Epoch of the last reconcile (time-varying).
    pub synced_epoch: usize,
    /// Current-epoch accumulators seen at the last reconcile, one per
    /// subspace (time-varying).
    pub sigma_last: Vec<Vec<f64>>,
    /// Global round of the last reconcile, 0 before the first (Top-K).
    pub synced_round: u64,
}

impl ClientState {
    /// A client that knows `θ₀` and nothing else. This is the same as having
    /// synced in epoch 0 before any update, with all accumulators zero.
    pub fn new(id: usize, theta0: &[f64], subspaces: usize, small_dim: usize) -> Self {
        Self {
            id,
            theta: theta0.to_vec(),
            synced_epoch: 0,
            sigma_last: vec![vec![0.0; small_dim]; subspaces],
            synced_round: 0,
        }
    }
}

/// Shared recipe for the seeded subspaces of a run.
///
/// Subspace `i` is drawn from seed `mix(master, i)`: static compression uses
/// `i = 0`, K-subspace `i = k`, time-varying `i = e·K + k`. Matrices are
/// cached so repeated reconciles do not regenerate them.
#[derive(Debug)]
pub struct ProjectionFactory {
    kind: SubspaceKind,
    master_seed: u64,
    big_dim: usize,
    small_dim: usize,
    cache: Mutex<HashMap<u64, SharedProjection>>,
}

impl ProjectionFactory {
    pub fn new(kind: SubspaceKind, master_seed: u64, big_dim: usize, small_dim: usize) -> Self {
        Self {
            kind,
            master_seed,
            big_dim,
            small_dim,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn big_dim(&self) -> usize {
        self.big_dim
    }

    pub fn small_dim(&self) -> usize {
        self.small_dim
    }

    pub fn seed(&self, index: u64) -> u64 {
        subspace_seed(self.master_seed, index)
    }

    pub fn matrix(&self, index: u64) -> Result<SharedProjection> {
        let mut cache = self.cache.lock().expect("projection cache poisoned");
        if let Some(a) = cache.get(&index) {
            return Ok(Arc::clone(a));
        }
        let a = self.kind.build(self.seed(index), self.big_dim, self.small_dim)?;
        cache.insert(index, Arc::clone(&a));
        Ok(a)
    }

    /// Drops cached matrices with index below `index`.
    pub fn evict_below(&self, index: u64) {
        self.cache
            .lock()
            .expect("projection cache poisoned")
            .retain(|&i, _| i >= index);
    }
}

pub(crate) fn ensure_finite(client: usize, grad: &[f64]) -> Result<()> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::PoisonedGradient { client })
    }
}

pub(crate) fn compress_into(
    client: usize,
    a: &dyn Projection,
    grad: &[f64],
    tag: SubspaceTag,
) -> Result<Sketch> {
    ensure_finite(client, grad)?;
    Ok(Sketch {
        payload: a.adjoint(grad)?,
        tag,
    })
}

/// `sigma −= lr · (sum / count)`, the shared accumulator update.
pub(crate) fn apply_step(sigma: &mut [f64], sum: &[f64], lr: f64, count: usize) {
    let w = count as f64;
    for (s, p) in sigma.iter_mut().zip(sum) {
        *s -= lr * (p / w);
    }
}

pub(crate) fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}

pub(crate) fn check_payload(sketch: &Sketch, small_dim: usize) -> Result<()> {
    if sketch.payload.len() != small_dim {
        return Err(Error::Protocol(format!(
            "sketch payload has {} entries, expected {small_dim}",
            sketch.payload.len()
        )));
    }
    Ok(())
}
