//! Round-based federated simulation with exact bandwidth accounting.
//!
//! Bandwidth is counted in float-slots: one slot per transmitted scalar,
//! with sparse indices charged as one slot each. Seeds and subspace tags are
//! free. Held-out evaluation is not charged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::SubspaceKind;

mod partition;
mod simulation;

pub use partition::{sample_clients, DataPartition, PartitionMode};
pub use simulation::{
    dry_run, run_experiment, ExperimentResult, RoundMetrics, RoundOutcome, Simulation,
};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "IGC_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`]. Later calls and an
/// unset or unparsable variable leave the pool alone.
pub fn configure_threads() {
    let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) else {
        return;
    };
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Uncompressed,
    #[default]
    Static,
    #[serde(rename = "ksub")]
    KSubspace,
    #[serde(rename = "timevarying")]
    TimeVarying,
    #[serde(rename = "topk")]
    TopK,
    #[serde(rename = "fedavg")]
    FedAvg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Uncompressed,
        Algorithm::Static,
        Algorithm::KSubspace,
        Algorithm::TimeVarying,
        Algorithm::TopK,
        Algorithm::FedAvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Uncompressed => "uncompressed",
            Algorithm::Static => "static",
            Algorithm::KSubspace => "ksub",
            Algorithm::TimeVarying => "timevarying",
            Algorithm::TopK => "topk",
            Algorithm::FedAvg => "fedavg",
        }
    }

    /// Whether the algorithm projects gradients into a random subspace.
    pub fn is_intrinsic(self) -> bool {
        matches!(
            self,
            Algorithm::Static | Algorithm::KSubspace | Algorithm::TimeVarying
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "algorithm",
                    format!(
                        "unknown algorithm `{s}` (expected uncompressed, static, ksub, timevarying, topk or fedavg)"
                    ),
                )
            })
    }
}

/// Parameters of a federated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    /// `N`.
    pub num_clients: usize,
    /// `W`.
    pub clients_per_round: usize,
    /// `T`.
    pub rounds_per_epoch: usize,
    /// `E`.
    pub epochs: usize,
    /// `ℓ`.
    pub local_batch: usize,
    /// `η`, constant for the whole run.
    pub learning_rate: f64,
    pub algorithm: Algorithm,
    /// `d`, required by the intrinsic algorithms.
    pub dimension: Option<usize>,
    /// `K`, required by `ksub`.
    pub subspaces: Option<usize>,
    /// `k`, required by `topk`.
    pub topk: Option<usize>,
    /// Local steps `L`, required by `fedavg`.
    pub local_iters: Option<usize>,
    pub master_seed: u64,
    pub projection: SubspaceKind,
    /// With `ksub`: draw a fresh set of `K` subspaces every epoch.
    pub ksub_time_varying: bool,
    pub partition: PartitionMode,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            clients_per_round: 10,
            rounds_per_epoch: 10,
            epochs: 1,
            local_batch: 32,
            learning_rate: 0.1,
            algorithm: Algorithm::Static,
            dimension: None,
            subspaces: None,
            topk: None,
            local_iters: None,
            master_seed: 0,
            projection: SubspaceKind::Fastfood,
            ksub_time_varying: false,
            partition: PartitionMode::Iid,
        }
    }
}

impl FederationConfig {
    /// Checks the configuration against a model of dimension `big_dim`.
    pub fn validate(&self, big_dim: usize) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("clients", "need at least one client"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(Error::config(
                "per_round",
                format!(
                    "clients per round must be in 1..={}, got {}",
                    self.num_clients, self.clients_per_round
                ),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "need at least one epoch"));
        }
        if self.local_batch == 0 {
            return Err(Error::config("batch", "local batch size must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config("lr", "learning rate must be finite and non-negative"));
        }
        if big_dim == 0 {
            return Err(Error::config("model", "model has no parameters"));
        }
        if self.algorithm.is_intrinsic() {
            let d = self
                .dimension
                .ok_or_else(|| Error::config("dimension", format!("{} needs `dimension`", self.algorithm)))?;
            if d == 0 {
                return Err(Error::config("dimension", "dimension must be at least 1"));
            }
            if self.projection.resolve(big_dim) == SubspaceKind::Dense && d > big_dim {
                return Err(Error::config(
                    "dimension",
                    format!("dense subspaces need dimension <= D = {big_dim}"),
                ));
            }
            if d > big_dim.next_power_of_two() {
                return Err(Error::config(
                    "dimension",
                    format!("dimension {d} exceeds the padded size of D = {big_dim}"),
                ));
            }
        }
        if self.algorithm == Algorithm::KSubspace {
            match self.subspaces {
                None => return Err(Error::config("subspaces", "ksub needs `subspaces`")),
                Some(0) => return Err(Error::config("subspaces", "subspaces must be at least 1")),
                Some(_) => {}
            }
        }
        if self.ksub_time_varying && self.algorithm != Algorithm::KSubspace {
            return Err(Error::config(
                "ksub_time_varying",
                "only applies to algorithm = ksub",
            ));
        }
        if self.algorithm == Algorithm::TopK {
            match self.topk {
                None => return Err(Error::config("topk", "topk needs `topk`")),
                Some(k) if k == 0 || k > big_dim => {
                    return Err(Error::config("topk", format!("topk must be in 1..={big_dim}")))
                }
                Some(_) => {}
            }
        }
        if self.algorithm == Algorithm::FedAvg {
            match self.local_iters {
                None => return Err(Error::config("local_iters", "fedavg needs `local_iters`")),
                Some(0) => return Err(Error::config("local_iters", "local_iters must be at least 1")),
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn total_rounds(&self) -> usize {
        self.epochs * self.rounds_per_epoch
    }

    /// Number of subspaces per epoch: `K` for ksub, 1 for static and
    /// time-varying.
    pub fn subspace_count(&self) -> usize {
        match self.algorithm {
            Algorithm::KSubspace => self.subspaces.unwrap_or(1),
            _ => 1,
        }
    }

    pub(crate) fn small_dim(&self) -> usize {
        self.dimension.unwrap_or(0)
    }

    /// Whether the run draws fresh subspaces every epoch.
    pub fn time_varying(&self) -> bool {
        self.algorithm == Algorithm::TimeVarying
            || (self.algorithm == Algorithm::KSubspace && self.ksub_time_varying)
    }
}

/// Cumulative traffic of one client.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientTraffic {
    pub upload_floats: u64,
    pub download_floats: u64,
    /// Rounds the client took part in.
    pub participations: u64,
    /// Gradient steps the client's uploads stand for (`L` per FedAvg round).
    pub steps: u64,
}

/// Per-client upload/download counts in float-slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthLedger {
    clients: Vec<ClientTraffic>,
    total: ClientTraffic,
}

impl BandwidthLedger {
    pub fn new(num_clients: usize) -> Self {
        Self {
            clients: vec![ClientTraffic::default(); num_clients],
            total: ClientTraffic::default(),
        }
    }

    pub fn record(&mut self, client: usize, upload: u64, download: u64, steps: u64) {
        for t in [&mut self.clients[client], &mut self.total] {
            t.upload_floats += upload;
            t.download_floats += download;
            t.participations += 1;
            t.steps += steps;
        }
    }

    pub fn client(&self, id: usize) -> &ClientTraffic {
        &self.clients[id]
    }

    pub fn clients(&self) -> &[ClientTraffic] {
        &self.clients
    }

    pub fn totals(&self) -> &ClientTraffic {
        &self.total
    }
}

/// Uncompressed-to-actual float ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionRatios {
    pub upload: f64,
    pub download: f64,
    /// `2·D_total / (up + down)`, the average over both directions.
    pub overall: f64,
}

/// Compression relative to sending `D` floats each way for every gradient
/// step the ledger accounts for.
pub fn compression_ratio(big_dim: usize, ledger: &BandwidthLedger) -> Result<CompressionRatios> {
    let t = ledger.totals();
    if t.steps == 0 {
        return Err(Error::UndefinedRatio("ledger is empty".into()));
    }
    if t.upload_floats == 0 || t.download_floats == 0 {
        return Err(Error::UndefinedRatio(format!(
            "zero traffic (up {}, down {})",
            t.upload_floats, t.download_floats
        )));
    }
    let reference = big_dim as f64 * t.steps as f64;
    Ok(CompressionRatios {
        upload: reference / t.upload_floats as f64,
        download: reference / t.download_floats as f64,
        overall: 2.0 * reference / (t.upload_floats + t.download_floats) as f64,
    })
}
