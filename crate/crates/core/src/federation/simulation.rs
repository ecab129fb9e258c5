use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_clients, Algorithm, BandwidthLedger, DataPartition, FederationConfig};
use crate::compressors::{
    ensure_finite, fedavg_local_update, ksub_assign, ksub_compress, ksub_reconcile, static_compress,
    static_reconcile, topk_compress, tv_compress, tv_reconcile, ClientState, DenseServer,
    KSubspaceServer, ProjectionFactory, Sketch, SparseUpdate, StaticServer, TimeVaryingServer,
    TopKServer,
};
use crate::error::{Error, Result};
use crate::models::GradientOracle;
use crate::rng::{keyed_rng, DOMAIN_ASSIGN, DOMAIN_CLIENT, DOMAIN_SAMPLING};

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub epoch: usize,
    /// Round index within the epoch.
    pub round: usize,
    /// Mean pre-update batch loss over the clients that contributed;
    /// `None` in dry runs.
    pub train_loss: Option<f64>,
    /// Held-out metric after the server step; `None` in dry runs.
    pub eval_metric: Option<f64>,
    /// Floats uploaded by all clients this round.
    pub up_floats: u64,
    /// Floats downloaded by all clients this round.
    pub down_floats: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub metrics: RoundMetrics,
    /// Sampled clients, ascending.
    pub participants: Vec<usize>,
    /// Participants dropped for non-finite gradients.
    pub excluded: Vec<usize>,
    /// Each participant's parameters right after reconciling, when capture is on.
    pub reconciled: Vec<(usize, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub algorithm: Algorithm,
    pub metric_name: String,
    /// `D`.
    pub big_dim: usize,
    /// Metric at `θ₀`; `None` in dry runs.
    pub initial_metric: Option<f64>,
    pub rows: Vec<RoundMetrics>,
    pub ledger: BandwidthLedger,
}

impl ExperimentResult {
    /// Metric after the last round, or the initial metric if there were none.
    pub fn final_metric(&self) -> Option<f64> {
        self.rows.last().map_or(self.initial_metric, |r| r.eval_metric)
    }
}

#[derive(Debug)]
enum Server {
    Dense(DenseServer),
    Static(StaticServer),
    KSubspace(KSubspaceServer),
    TimeVarying(TimeVaryingServer),
    TopK(TopKServer),
}

enum Upload {
    Sketch(Sketch),
    Dense(Vec<f64>),
    Sparse(SparseUpdate),
}

struct ClientWork {
    id: usize,
    state: ClientState,
    loss: f64,
    upload: Option<Upload>,
    up: u64,
    down: u64,
    steps: u64,
    reconciled: Option<Vec<f64>>,
}

/// A federated run driven round by round.
pub struct Simulation {
    config: FederationConfig,
    oracle: Arc<dyn GradientOracle>,
    partition: DataPartition,
    eligible: Vec<usize>,
    theta0: Arc<Vec<f64>>,
    server: Server,
    tv_clients: HashMap<usize, ClientState>,
    topk_synced: Vec<u64>,
    ledger: BandwidthLedger,
    epoch: usize,
    global_round: u64,
    capture: bool,
}

impl Simulation {
    pub fn new(
        config: FederationConfig,
        oracle: Arc<dyn GradientOracle>,
        partition: DataPartition,
        theta0: Vec<f64>,
    ) -> Result<Self> {
        let big_dim = oracle.dim();
        config.validate(big_dim)?;
        if theta0.len() != big_dim {
            return Err(Error::config(
                "theta0",
                format!("initial parameters have {} entries, model has {big_dim}", theta0.len()),
            ));
        }
        if partition.num_clients() != config.num_clients {
            return Err(Error::config(
                "clients",
                format!(
                    "partition covers {} clients, config has {}",
                    partition.num_clients(),
                    config.num_clients
                ),
            ));
        }
        let eligible = partition.eligible();
        if eligible.len() < config.clients_per_round {
            return Err(Error::config(
                "per_round",
                format!(
                    "only {} clients hold data, cannot sample {} per round",
                    eligible.len(),
                    config.clients_per_round
                ),
            ));
        }
        let theta0 = Arc::new(theta0);
        let k = config.subspace_count();
        let factory = config.algorithm.is_intrinsic().then(|| {
            Arc::new(ProjectionFactory::new(
                config.projection,
                config.master_seed,
                big_dim,
                config.small_dim(),
            ))
        });
        let server = match (config.algorithm, &factory) {
            (Algorithm::Uncompressed | Algorithm::FedAvg, _) => Server::Dense(DenseServer::new(theta0.to_vec())),
            (Algorithm::TopK, _) => Server::TopK(TopKServer::new(theta0.to_vec())),
            (_, Some(f)) if config.time_varying() => {
                Server::TimeVarying(TimeVaryingServer::new(f.clone(), theta0.clone(), k)?)
            }
            (Algorithm::Static, Some(f)) => Server::Static(StaticServer::new(f.matrix(0)?, theta0.clone())?),
            (Algorithm::KSubspace, Some(f)) => {
                let matrices = (0..k as u64).map(|i| f.matrix(i)).collect::<Result<Vec<_>>>()?;
                Server::KSubspace(KSubspaceServer::new(matrices, theta0.clone())?)
            }
            _ => unreachable!("intrinsic algorithms always have a factory"),
        };
        Ok(Self {
            ledger: BandwidthLedger::new(config.num_clients),
            topk_synced: vec![0; config.num_clients],
            config,
            oracle,
            partition,
            eligible,
            theta0,
            server,
            tv_clients: HashMap::new(),
            epoch: 0,
            global_round: 0,
            capture: false,
        })
    }

    /// Record every participant's reconciled parameters in [`RoundOutcome`].
    pub fn set_capture(&mut self, on: bool) {
        self.capture = on;
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn ledger(&self) -> &BandwidthLedger {
        &self.ledger
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    /// Materializes the server parameters.
    pub fn parameters(&self) -> Result<Vec<f64>> {
        match &self.server {
            Server::Dense(s) => Ok(s.parameters().to_vec()),
            Server::TopK(s) => Ok(s.parameters().to_vec()),
            Server::Static(s) => s.parameters(),
            Server::KSubspace(s) => s.parameters(),
            Server::TimeVarying(s) => s.parameters(),
        }
    }

    /// Closes the current epoch; time-varying runs switch to fresh subspaces.
    pub fn end_epoch(&mut self) -> Result<()> {
        if let Server::TimeVarying(s) = &mut self.server {
            s.advance_epoch()?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Samples `W` clients, lets each reconcile, compute a gradient and
    /// upload, then applies one server step.
    pub fn run_round(&mut self, round: usize) -> Result<RoundOutcome> {
        let cfg = &self.config;
        let mut rng = keyed_rng(cfg.master_seed, &[DOMAIN_SAMPLING, self.epoch as u64, round as u64]);
        let participants: Vec<usize> = sample_clients(&mut rng, self.eligible.len(), cfg.clients_per_round)?
            .into_iter()
            .map(|i| self.eligible[i])
            .collect();

        let k = cfg.subspace_count();
        let small = cfg.small_dim();
        let states: Vec<ClientState> = participants
            .iter()
            .map(|&id| {
                self.tv_clients
                    .remove(&id)
                    .unwrap_or_else(|| ClientState::new(id, &self.theta0, k, small))
            })
            .collect();

        let works: Vec<ClientWork> = states
            .into_par_iter()
            .map(|state| self.client_work(state))
            .collect::<Result<_>>()?;

        let mut outcome = RoundOutcome {
            metrics: RoundMetrics {
                epoch: self.epoch,
                round,
                train_loss: None,
                eval_metric: None,
                up_floats: 0,
                down_floats: 0,
            },
            participants,
            excluded: Vec::new(),
            reconciled: Vec::new(),
        };
        let mut sketches = Vec::new();
        let mut dense = Vec::new();
        let mut sparse = Vec::new();
        let mut loss_sum = 0.0;
        let mut contributors = 0usize;
        for w in works {
            self.ledger.record(w.id, w.up, w.down, w.steps);
            outcome.metrics.up_floats += w.up;
            outcome.metrics.down_floats += w.down;
            if let Some(theta) = w.reconciled {
                outcome.reconciled.push((w.id, theta));
            }
            if let Server::TopK(s) = &self.server {
                self.topk_synced[w.id] = s.round();
            }
            match w.upload {
                None => outcome.excluded.push(w.id),
                Some(upload) => {
                    loss_sum += w.loss;
                    contributors += 1;
                    match upload {
                        Upload::Sketch(s) => sketches.push(s),
                        Upload::Dense(v) => dense.push(v),
                        Upload::Sparse(u) => sparse.push(u),
                    }
                }
            }
            if self.config.time_varying() {
                self.tv_clients.insert(w.id, w.state);
            }
        }

        let lr = self.config.learning_rate;
        if contributors > 0 {
            match &mut self.server {
                Server::Static(s) => s.step(&sketches, lr)?,
                Server::KSubspace(s) => s.step(&sketches, lr)?,
                Server::TimeVarying(s) => s.step(&sketches, lr)?,
                Server::TopK(s) => s.step(&sparse, lr)?,
                Server::Dense(s) if self.config.algorithm == Algorithm::FedAvg => s.apply_deltas(&dense)?,
                Server::Dense(s) => s.step_gradients(&dense, lr)?,
            }
        }
        let train_loss = loss_sum / contributors as f64;
        if !train_loss.is_finite() {
            let theta = self.parameters()?;
            let norm = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                round,
                snapshot: format!(
                    "participants {:?}, excluded {:?}, max |theta| = {norm}, lr = {lr}",
                    outcome.participants, outcome.excluded
                ),
            });
        }
        outcome.metrics.train_loss = Some(train_loss);
        outcome.metrics.eval_metric = Some(self.oracle.evaluate(&self.parameters()?));
        self.global_round += 1;
        Ok(outcome)
    }

    fn client_work(&self, mut state: ClientState) -> Result<ClientWork> {
        let cfg = &self.config;
        let id = state.id;
        let mut rng = keyed_rng(cfg.master_seed, &[DOMAIN_CLIENT, self.global_round, id as u64]);
        let big = self.theta0.len() as u64;
        let small = cfg.small_dim() as u64;
        let subspaces = cfg.subspace_count();
        let assign = |rng_path: u64| {
            let mut r = keyed_rng(cfg.master_seed, &[DOMAIN_ASSIGN, rng_path, id as u64]);
            ksub_assign(&mut r, subspaces)
        };

        let down = match &self.server {
            Server::Static(s) => {
                let dl = s.download();
                static_reconcile(&mut state, s.projection().as_ref(), &self.theta0, &dl)?;
                small
            }
            Server::KSubspace(s) => {
                let dl = s.download();
                ksub_reconcile(&mut state, s.projections(), &self.theta0, &dl)?;
                small * subspaces as u64
            }
            Server::TimeVarying(s) => {
                let dl = s.download_for(state.synced_epoch)?;
                tv_reconcile(&mut state, s.factory(), &dl)?;
                dl.floats() as u64
            }
            Server::Dense(s) => {
                state.theta = s.parameters().to_vec();
                big
            }
            Server::TopK(s) => {
                state.theta = s.parameters().to_vec();
                s.download_floats(self.topk_synced[id]) as u64
            }
        };
        let reconciled = self.capture.then(|| state.theta.clone());

        let (loss, upload, up, steps) = if cfg.algorithm == Algorithm::FedAvg {
            let iters = cfg.local_iters.unwrap_or(1);
            let batches: Vec<Vec<usize>> = (0..iters)
                .map(|_| self.partition.batch(id, cfg.local_batch, &mut rng))
                .collect();
            let update = fedavg_local_update(self.oracle.as_ref(), &state.theta, &batches, cfg.learning_rate, &mut rng)?;
            let upload = ensure_finite(id, &update.delta).ok().map(|_| Upload::Dense(update.delta));
            (update.loss, upload, big, iters as u64)
        } else {
            let batch = self.partition.batch(id, cfg.local_batch, &mut rng);
            let out = self.oracle.loss_and_grad(&state.theta, &batch, &mut rng);
            let upload = match &self.server {
                Server::Static(s) => static_compress(id, s.projection().as_ref(), &out.grad).map(Upload::Sketch),
                Server::KSubspace(s) => {
                    let k = assign(self.global_round);
                    ksub_compress(id, s.projections()[k].as_ref(), k, &out.grad).map(Upload::Sketch)
                }
                Server::TimeVarying(s) => {
                    let k = if subspaces == 1 { 0 } else { assign(self.global_round) };
                    tv_compress(id, s.factory(), subspaces, s.epoch(), k, &out.grad).map(Upload::Sketch)
                }
                Server::Dense(_) => ensure_finite(id, &out.grad).map(|_| Upload::Dense(out.grad)),
                Server::TopK(_) => topk_compress(id, &out.grad, cfg.topk.unwrap_or(1)).map(Upload::Sparse),
            };
            let upload = match upload {
                Ok(u) => Some(u),
                Err(Error::PoisonedGradient { .. }) => None,
                Err(e) => return Err(e),
            };
            let up = match &upload {
                Some(Upload::Sketch(s)) => s.floats() as u64,
                Some(Upload::Dense(v)) => v.len() as u64,
                Some(Upload::Sparse(u)) => u.floats() as u64,
                None => 0,
            };
            (out.loss, upload, up, 1)
        };
        let (up, steps) = if upload.is_some() { (up, steps) } else { (0, 0) };
        Ok(ClientWork {
            id,
            state,
            loss,
            upload,
            up,
            down,
            steps,
            reconciled,
        })
    }
}

/// Runs `E` epochs of `T` rounds, evaluating after every round.
pub fn run_experiment(
    config: &FederationConfig,
    oracle: Arc<dyn GradientOracle>,
    partition: DataPartition,
    theta0: Vec<f64>,
) -> Result<ExperimentResult> {
    let initial_metric = Some(oracle.evaluate(&theta0));
    let metric_name = oracle.metric_name().to_string();
    let big_dim = oracle.dim();
    let mut sim = Simulation::new(config.clone(), oracle, partition, theta0)?;
    let mut rows = Vec::with_capacity(config.total_rounds());
    for epoch in 0..config.epochs {
        for round in 0..config.rounds_per_epoch {
            rows.push(sim.run_round(round)?.metrics);
        }
        if epoch + 1 < config.epochs {
            sim.end_epoch()?;
        }
    }
    Ok(ExperimentResult {
        algorithm: config.algorithm,
        metric_name,
        big_dim,
        initial_metric,
        rows,
        ledger: sim.ledger,
    })
}

/// Bandwidth accounting without any model computation, for dimensions too
/// large to simulate. Client sampling matches a real run over a data-free
/// oracle of dimension `big_dim`.
///
/// Costs are those a real run charges, except Top-K downloads, which assume
/// every round touches `W·k` distinct coordinates (an upper bound).
pub fn dry_run(config: &FederationConfig, big_dim: usize) -> Result<ExperimentResult> {
    config.validate(big_dim)?;
    let big = big_dim as u64;
    let small = config.small_dim() as u64;
    let k = config.subspace_count() as u64;
    let w = config.clients_per_round as u64;
    let mut ledger = BandwidthLedger::new(config.num_clients);
    let mut synced = vec![0u64; config.num_clients];
    let mut rows = Vec::with_capacity(config.total_rounds());
    let mut global_round = 0u64;
    for epoch in 0..config.epochs {
        for round in 0..config.rounds_per_epoch {
            let mut rng = keyed_rng(config.master_seed, &[DOMAIN_SAMPLING, epoch as u64, round as u64]);
            let mut row = RoundMetrics {
                epoch,
                round,
                train_loss: None,
                eval_metric: None,
                up_floats: 0,
                down_floats: 0,
            };
            for id in sample_clients(&mut rng, config.num_clients, config.clients_per_round)? {
                let (up, down, steps) = match config.algorithm {
                    Algorithm::Uncompressed => (big, big, 1),
                    Algorithm::FedAvg => (big, big, config.local_iters.unwrap_or(1) as u64),
                    Algorithm::Static => (small, small, 1),
                    _ if config.time_varying() => {
                        let behind = (epoch as u64).saturating_sub(synced[id] + 1);
                        synced[id] = epoch as u64;
                        (small, small * k * (2 + behind), 1)
                    }
                    Algorithm::KSubspace => (small, small * k, 1),
                    Algorithm::TopK => {
                        let topk = config.topk.unwrap_or(1) as u64;
                        let rounds = global_round - synced[id];
                        synced[id] = global_round;
                        let changed = (w * topk).saturating_mul(rounds).min(big);
                        (2 * topk, (2 * changed).min(big), 1)
                    }
                    Algorithm::TimeVarying => unreachable!("handled by the time-varying arm"),
                };
                ledger.record(id, up, down, steps);
                row.up_floats += up;
                row.down_floats += down;
            }
            rows.push(row);
            global_round += 1;
        }
    }
    Ok(ExperimentResult {
        algorithm: config.algorithm,
        metric_name: "none".into(),
        big_dim,
        initial_metric: None,
        rows,
        ledger,
    })
}
