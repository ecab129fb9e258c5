//! Acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the PASS/FAIL lines show up
//! in ordinary `cargo test` output. Positional arguments filter criteria by
//! number or name substring.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use igc_core::compressors::{ksub_assign, ProjectionFactory};
use igc_core::config::load_run_config;
use igc_core::experiments::{
    estimate_intrinsic_rho, probe_time_varying, tv_vs_static, ProbeRun, DECAY_SLACK, MIN_R_SQUARED,
    MIN_WIN_FRACTION,
};
use igc_core::federation::{
    compression_ratio, dry_run, Algorithm, DataPartition, FederationConfig, PartitionMode, Simulation,
};
use igc_core::models::{BlobSpec, Dataset, GradientOracle, LogisticModel, MlpModel, QuadraticProblem};
use igc_core::oracle::{dense_fastfood, finite_difference_error};
use igc_core::projection::{materialize, FastfoodMatrix, Projection, SubspaceKind};
use igc_core::rng::{keyed_rng, DOMAIN_ASSIGN};
use igc_core::runner::execute_run;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// Dense copy of subspace `index` built from its components, independent of
/// the fast transform.
fn dense_subspace(factory: &ProjectionFactory, index: u64) -> DMatrix<f64> {
    let a = FastfoodMatrix::new(factory.seed(index), factory.big_dim(), factory.small_dim()).unwrap();
    dense_fastfood(&a)
}

// 1 -------------------------------------------------------------------------

fn compression_arithmetic() -> Check {
    const BIG: usize = 124_439_808;
    let mut out = Vec::new();
    let mut ok = true;
    for (d, expected, tol) in [(4_194_304usize, 29.7, 0.1), (65_536, 1899.0, 2.0)] {
        let cfg = FederationConfig {
            num_clients: 16,
            clients_per_round: 4,
            rounds_per_epoch: 25,
            epochs: 2,
            algorithm: Algorithm::Static,
            dimension: Some(d),
            ..FederationConfig::default()
        };
        let result = dry_run(&cfg, BIG).map_err(|e| e.to_string())?;
        let r = compression_ratio(BIG, &result.ledger).map_err(|e| e.to_string())?;
        ok &= (r.overall - expected).abs() <= tol && r.upload == r.overall && r.download == r.overall;
        out.push(format!("d={d}: {:.3}x (want {expected}±{tol})", r.overall));
    }
    ensure(ok, out.join(", "))
}

// 2 -------------------------------------------------------------------------

fn quadratic(dim: usize, seed: u64) -> Arc<QuadraticProblem> {
    Arc::new(QuadraticProblem::dominant_spectrum(dim, 4, 1.0, 0.05, seed).unwrap())
}

fn ledger_equality() -> Check {
    const BIG: usize = 64;
    const SMALL: u64 = 8;
    const K: u64 = 3;
    let (n, t, e) = (4usize, 3usize, 2usize);
    let steps = (t * e) as u64;
    let cases: [(Algorithm, Option<usize>, u64, u64); 4] = [
        (Algorithm::Static, None, SMALL, SMALL),
        (Algorithm::TimeVarying, None, SMALL, 2 * SMALL),
        (Algorithm::KSubspace, Some(K as usize), SMALL, SMALL * K),
        (Algorithm::Uncompressed, None, BIG as u64, BIG as u64),
    ];
    let mut out = Vec::new();
    let mut ok = true;
    for (algorithm, subspaces, up, down) in cases {
        let cfg = FederationConfig {
            num_clients: n,
            clients_per_round: n,
            rounds_per_epoch: t,
            epochs: e,
            algorithm,
            dimension: algorithm.is_intrinsic().then_some(SMALL as usize),
            subspaces,
            master_seed: 5,
            ..FederationConfig::default()
        };
        let oracle = quadratic(BIG, 1);
        let result = igc_core::federation::run_experiment(&cfg, oracle, DataPartition::data_free(n), vec![0.5; BIG])
            .map_err(|err| err.to_string())?;
        let exact = result
            .ledger
            .clients()
            .iter()
            .all(|c| c.upload_floats == up * steps && c.download_floats == down * steps && c.steps == steps);
        ok &= exact;
        let c0 = result.ledger.client(0);
        out.push(format!("{}: {}/{}", algorithm.name(), c0.upload_floats, c0.download_floats));
    }
    ensure(ok, format!("per-client up/down over {steps} steps with d={SMALL}, K={K}, D={BIG}: {}", out.join(", ")))
}

// 3 -------------------------------------------------------------------------

fn isometry_in_expectation() -> Check {
    const BIG: usize = 64;
    const SMALL: usize = 16;
    const SEEDS: u64 = 10_000;
    let x = gaussian_vec(&mut ChaCha8Rng::seed_from_u64(42), BIG);
    let mut mean = vec![0.0; BIG];
    for seed in 0..SEEDS {
        let a = FastfoodMatrix::new(seed, BIG, SMALL).unwrap();
        let y = a.forward(&a.adjoint(&x).unwrap()).unwrap();
        for (m, v) in mean.iter_mut().zip(&y) {
            *m += v / SEEDS as f64;
        }
    }
    let err = max_abs_diff(&mean, &x);
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(
        err <= 0.05 * scale,
        format!("||mean(AA^T x) - x||inf = {err:.4}, 5% of ||x||inf = {:.4}", 0.05 * scale),
    )
}

// 4 -------------------------------------------------------------------------

fn dense_oracle_equivalence() -> Check {
    let bigs = [1usize, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 32, 33, 48, 50, 63, 64];
    let smalls = [1usize, 2, 3, 4, 7, 8, 9, 15, 16];
    let mut grid = Vec::new();
    for &big in &bigs {
        for &small in &smalls {
            if small <= big.next_power_of_two() {
                grid.push((big, small));
            }
        }
    }
    let mut worst = 0.0f64;
    for (i, &(big, small)) in grid.iter().enumerate() {
        let a = FastfoodMatrix::new(1000 + i as u64, big, small).unwrap();
        let dense = dense_fastfood(&a);
        worst = worst.max((materialize(&a).unwrap() - &dense).amax());
        let mut adj = DMatrix::zeros(small, big);
        for j in 0..big {
            let mut e = vec![0.0; big];
            e[j] = 1.0;
            adj.set_column(j, &DVector::from_vec(a.adjoint(&e).unwrap()));
        }
        worst = worst.max((adj - dense.transpose()).amax());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_rel = 0.0f64;
    for i in 0..100 {
        let (big, small) = grid[rng.random_range(0..grid.len())];
        let a = FastfoodMatrix::new(5000 + i, big, small).unwrap();
        let s = gaussian_vec(&mut rng, small);
        let y = gaussian_vec(&mut rng, big);
        let lhs: f64 = a.forward(&s).unwrap().iter().zip(&y).map(|(p, q)| p * q).sum();
        let rhs: f64 = s.iter().zip(a.adjoint(&y).unwrap()).map(|(p, q)| p * q).sum();
        worst_rel = worst_rel.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12));
    }
    ensure(
        worst <= 1e-6 && worst_rel <= 1e-5,
        format!(
            "{} grid points, max entry error {worst:.2e} (tol 1e-6); adjoint identity max rel error {worst_rel:.2e} (tol 1e-5)",
            grid.len()
        ),
    )
}

// 5 -------------------------------------------------------------------------

fn trajectory_equivalence() -> Check {
    const BIG: usize = 32;
    const SMALL: usize = 8;
    const STEPS: usize = 100;
    let problem = quadratic(BIG, 3);
    let theta0 = gaussian_vec(&mut ChaCha8Rng::seed_from_u64(9), BIG);
    let cfg = FederationConfig {
        num_clients: 1,
        clients_per_round: 1,
        rounds_per_epoch: STEPS,
        epochs: 1,
        learning_rate: 0.3,
        algorithm: Algorithm::Static,
        dimension: Some(SMALL),
        master_seed: 21,
        projection: SubspaceKind::Fastfood,
        ..FederationConfig::default()
    };
    let mut sim = Simulation::new(cfg.clone(), problem.clone(), DataPartition::data_free(1), theta0.clone())
        .map_err(|e| e.to_string())?;

    // Plain SGD on h(s) = f(θ₀ + A s) with a dense A.
    let factory = ProjectionFactory::new(SubspaceKind::Fastfood, cfg.master_seed, BIG, SMALL);
    let a = dense_subspace(&factory, 0);
    let t0 = DVector::from_vec(theta0);
    let mut s = DVector::zeros(SMALL);
    let mut worst = 0.0f64;
    for round in 0..STEPS {
        let theta = &t0 + &a * &s;
        let grad_h = a.transpose() * DVector::from_vec(problem.gradient(theta.as_slice()));
        s -= grad_h * cfg.learning_rate;
        sim.run_round(round).map_err(|e| e.to_string())?;
        let expected = &t0 + &a * &s;
        worst = worst.max(max_abs_diff(&sim.parameters().unwrap(), expected.as_slice()));
    }
    let gap0 = problem.value(t0.as_slice()) - problem.minimum();
    let gap = problem.value(&sim.parameters().unwrap()) - problem.minimum();
    ensure(
        worst <= 1e-6,
        format!("max ||theta_sim - (theta0 + A s_t)||inf over {STEPS} steps = {worst:.2e} (tol 1e-6); gap {gap0:.3} -> {gap:.3}"),
    )
}

// 6 -------------------------------------------------------------------------

const RECON_CLIENTS: usize = 5;
const RECON_BIG_FEATURES: usize = 7;
const RECON_CLASSES: usize = 4;

fn recon_model() -> (Arc<LogisticModel>, DataPartition) {
    let data = BlobSpec {
        classes: RECON_CLASSES,
        features: RECON_BIG_FEATURES,
        train_per_class: 5,
        test_per_class: 5,
        center_norm: 3.0,
        noise_std: 1.0,
        separable: false,
        seed: 17,
    }
    .generate()
    .unwrap();
    let model = Arc::new(LogisticModel::new(Arc::new(data.train), Arc::new(data.test)));
    let labels = model.training_labels().unwrap().to_vec();
    let partition = DataPartition::new(PartitionMode::Iid, &labels, RECON_CLIENTS, 3).unwrap();
    (model, partition)
}

/// Drives a simulation in capture mode next to a dense reference of the
/// server parameters; returns the worst reconciled deviation.
fn reconciliation_run(cfg: &FederationConfig) -> Result<(f64, usize), String> {
    let (model, partition) = recon_model();
    let big = model.dim();
    let small = cfg.dimension.unwrap();
    let k_total = cfg.subspace_count();
    let theta0 = model.initial_parameters(4);
    let factory = ProjectionFactory::new(cfg.projection, cfg.master_seed, big, small);
    let mut sim = Simulation::new(cfg.clone(), model.clone(), partition.clone(), theta0.clone()).map_err(|e| e.to_string())?;
    sim.set_capture(true);

    let mut theta = DVector::from_vec(theta0);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut global_round = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for epoch in 0..cfg.epochs {
        let bases: Vec<DMatrix<f64>> = match (cfg.algorithm, cfg.time_varying()) {
            (_, true) => (0..k_total).map(|k| dense_subspace(&factory, (epoch * k_total + k) as u64)).collect(),
            (Algorithm::Static, _) => vec![dense_subspace(&factory, 0)],
            _ => (0..k_total).map(|k| dense_subspace(&factory, k as u64)).collect(),
        };
        for round in 0..cfg.rounds_per_epoch {
            let outcome = sim.run_round(round).map_err(|e| e.to_string())?;
            for (_, reconciled) in &outcome.reconciled {
                worst = worst.max(max_abs_diff(reconciled, theta.as_slice()));
                checked += 1;
            }
            let mut step = DVector::zeros(big);
            for &id in &outcome.participants {
                // Shards are smaller than the batch, so every client uses its whole shard.
                let g = model.loss_and_grad(theta.as_slice(), partition.shard(id), &mut rng).grad;
                let k = if k_total == 1 {
                    0
                } else {
                    ksub_assign(&mut keyed_rng(cfg.master_seed, &[DOMAIN_ASSIGN, global_round, id as u64]), k_total)
                };
                let a = &bases[k];
                step += a * (a.transpose() * DVector::from_vec(g));
            }
            theta -= step * (cfg.learning_rate / outcome.participants.len() as f64);
            global_round += 1;
        }
        if epoch + 1 < cfg.epochs {
            sim.end_epoch().map_err(|e| e.to_string())?;
        }
    }
    worst = worst.max(max_abs_diff(&sim.parameters().unwrap(), theta.as_slice()));
    Ok((worst, checked))
}

fn reconciliation_exactness() -> Check {
    let base = FederationConfig {
        num_clients: RECON_CLIENTS,
        clients_per_round: 2,
        rounds_per_epoch: 6,
        epochs: 4,
        local_batch: 64,
        learning_rate: 0.5,
        dimension: Some(6),
        master_seed: 99,
        projection: SubspaceKind::Fastfood,
        ..FederationConfig::default()
    };
    let cases = [
        ("static", FederationConfig { algorithm: Algorithm::Static, ..base.clone() }),
        ("ksub K=3", FederationConfig { algorithm: Algorithm::KSubspace, subspaces: Some(3), ..base.clone() }),
        ("timevarying", FederationConfig { algorithm: Algorithm::TimeVarying, ..base.clone() }),
        (
            "timevarying K=2",
            FederationConfig {
                algorithm: Algorithm::KSubspace,
                subspaces: Some(2),
                ksub_time_varying: true,
                clients_per_round: 3,
                ..base.clone()
            },
        ),
    ];
    let mut ok = true;
    let mut out = Vec::new();
    for (name, cfg) in &cases {
        let (worst, checked) = reconciliation_run(cfg)?;
        ok &= worst <= 1e-6;
        out.push(format!("{name} {worst:.1e} over {checked}"));
    }

    // K = 1 against static, bit for bit.
    let (model, partition) = recon_model();
    let theta0 = model.initial_parameters(4);
    let run = |cfg: FederationConfig| -> Result<(Vec<Vec<(usize, Vec<f64>)>>, Vec<f64>), String> {
        let mut sim = Simulation::new(cfg.clone(), model.clone(), partition.clone(), theta0.clone()).map_err(|e| e.to_string())?;
        sim.set_capture(true);
        let mut all = Vec::new();
        for epoch in 0..cfg.epochs {
            for round in 0..cfg.rounds_per_epoch {
                all.push(sim.run_round(round).map_err(|e| e.to_string())?.reconciled);
            }
            if epoch + 1 < cfg.epochs {
                sim.end_epoch().map_err(|e| e.to_string())?;
            }
        }
        Ok((all, sim.parameters().map_err(|e| e.to_string())?))
    };
    let st = run(FederationConfig { algorithm: Algorithm::Static, ..base.clone() })?;
    let k1 = run(FederationConfig { algorithm: Algorithm::KSubspace, subspaces: Some(1), ..base.clone() })?;
    let identical = st == k1;
    ok &= identical;
    out.push(format!("K=1 bit-identical to static: {identical}"));
    ensure(ok, format!("max reconciled deviation (tol 1e-6): {}", out.join("; ")))
}

// 7 -------------------------------------------------------------------------

fn epoch_decay() -> Check {
    const BIG: usize = 200;
    const SMALL: usize = 20;
    const EPOCHS: usize = 8;
    const STEPS: usize = 50;
    const TRIALS: usize = 50;
    let problem = Arc::new(QuadraticProblem::dominant_spectrum(BIG, 10, 1.0, 0.1, 2024).unwrap());
    let theta0 = vec![0.0; BIG];
    let rho = estimate_intrinsic_rho(&problem, &theta0, SMALL, 100, SubspaceKind::Fastfood, 11).map_err(|e| e.to_string())?;
    let run = ProbeRun {
        problem,
        theta0,
        d: SMALL,
        lr: 0.3,
        kind: SubspaceKind::Fastfood,
        seed: 31,
    };
    let traj = probe_time_varying(&run, EPOCHS, STEPS).map_err(|e| e.to_string())?;
    let fit = traj.fit().map_err(|e| e.to_string())?;
    let ratio = traj.final_gap() / traj.initial_gap;
    let bound = DECAY_SLACK * rho.median.powi(EPOCHS as i32);
    let pairs = tv_vs_static(&run, EPOCHS, STEPS, TRIALS).map_err(|e| e.to_string())?;
    let wins = pairs.iter().filter(|(st, tv)| tv < st).count();
    let win_fraction = wins as f64 / TRIALS as f64;

    // Not gating: how often the bound holds on other draws of the same problem family.
    let mut held = 0;
    for problem_seed in 1..=10u64 {
        let problem = Arc::new(QuadraticProblem::dominant_spectrum(BIG, 10, 1.0, 0.1, problem_seed).unwrap());
        let rho = estimate_intrinsic_rho(&problem, &run.theta0, SMALL, 100, SubspaceKind::Fastfood, 11)
            .map_err(|e| e.to_string())?;
        let other = ProbeRun { problem, ..run.clone() };
        let t = probe_time_varying(&other, EPOCHS, STEPS).map_err(|e| e.to_string())?;
        if t.final_gap() / t.initial_gap <= DECAY_SLACK * rho.median.powi(EPOCHS as i32) {
            held += 1;
        }
    }
    ensure(
        fit.slope < 0.0 && fit.r_squared >= MIN_R_SQUARED && ratio <= bound && win_fraction >= MIN_WIN_FRACTION,
        format!(
            "rho_median {:.3}; slope {:.3}, R^2 {:.3} (>= {MIN_R_SQUARED}); final/initial gap {ratio:.3} <= 3 rho^{EPOCHS} = {bound:.3}; time-varying wins {wins}/{TRIALS} (>= {MIN_WIN_FRACTION}); [info] bound held on {held}/10 other problem draws",
            rho.median, fit.slope, fit.r_squared
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn end_to_end_learning() -> Check {
    let base = "model = \"logistic\"\nclasses = 4\nfeatures = 255\ncenter_norm = 60.0\nnoise_std = 1.0\n\
                separable = true\nclients = 100\nper_round = 10\nrounds = 300\nepochs = 1\nlr = 1.0\n\
                partition = \"single-class\"\nseed = 8\ndata_seed = 8\n";
    let run = |extra: &str| -> Result<(f64, usize), String> {
        let cfg = load_run_config(Some(&format!("{base}{extra}")), &toml::Table::new()).map_err(|e| e.to_string())?;
        let out = execute_run(&cfg).map_err(|e| e.to_string())?;
        Ok((out.result.final_metric().unwrap_or(f64::NAN), out.result.big_dim))
    };
    // The uncompressed run is the oracle and goes first.
    let (uncompressed, big) = run("algorithm = \"uncompressed\"\n")?;
    let small = big / 64;
    let (compressed, _) = run(&format!("algorithm = \"static\"\ndimension = {small}\n"))?;
    ensure(
        compressed >= 0.95 * uncompressed,
        format!("D={big}, d={small}: static accuracy {compressed:.4} vs uncompressed {uncompressed:.4} (need >= {:.4})", 0.95 * uncompressed),
    )
}

// 9 -------------------------------------------------------------------------

fn gradient_oracle_validity() -> Check {
    const H: f64 = 1e-5;
    const POINTS: usize = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut out = Vec::new();
    let mut ok = true;

    let quad = QuadraticProblem::dominant_spectrum(50, 5, 1.0, 0.01, 4).unwrap();
    let worst = (0..POINTS)
        .map(|_| finite_difference_error(&quad, &gaussian_vec(&mut rng, 50), &[], H))
        .fold(0.0f64, f64::max);
    ok &= worst <= 1e-4;
    out.push(format!("quadratic {worst:.1e} (tol 1e-4)"));

    let blobs = |features: usize, seed: u64| -> (Arc<Dataset>, Arc<Dataset>) {
        let d = BlobSpec {
            classes: 4,
            features,
            train_per_class: 20,
            test_per_class: 5,
            center_norm: 3.0,
            noise_std: 1.0,
            separable: false,
            seed,
        }
        .generate()
        .unwrap();
        (Arc::new(d.train), Arc::new(d.test))
    };
    let batch = |rng: &mut ChaCha8Rng| -> Vec<usize> { (0..8).map(|_| rng.random_range(0..80)).collect() };

    let (train, test) = blobs(10, 1);
    let logistic = LogisticModel::new(train, test);
    let worst = (0..POINTS)
        .map(|_| {
            let theta = gaussian_vec(&mut rng, logistic.dim());
            let b = batch(&mut rng);
            finite_difference_error(&logistic, &theta, &b, H)
        })
        .fold(0.0f64, f64::max);
    ok &= worst <= 1e-4;
    out.push(format!("logistic {worst:.1e} (tol 1e-4)"));

    let (train, test) = blobs(30, 2);
    let mlp = MlpModel::new(&[30, 60, 4], train, test).unwrap();
    let worst = (0..POINTS)
        .map(|_| {
            let theta: Vec<f64> = gaussian_vec(&mut rng, mlp.dim()).iter().map(|v| 0.3 * v).collect();
            let b = batch(&mut rng);
            finite_difference_error(&mlp, &theta, &b, H)
        })
        .fold(0.0f64, f64::max);
    ok &= worst <= 1e-3;
    out.push(format!("mlp D={} {worst:.1e} (tol 1e-3)", mlp.dim()));
    ensure(ok, format!("max relative error over {POINTS} points: {}", out.join(", ")))
}

// 10 ------------------------------------------------------------------------

fn igc(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_igc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("igc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = "algorithm = \"timevarying\"\ndimension = 8\nclients = 20\nper_round = 5\nrounds = 5\nepochs = 3\n\
               partition = \"single-class\"\nseed = 77\n";
    std::fs::write(dir.path().join("run.toml"), cfg).map_err(|e| e.to_string())?;
    igc(&["run", "--config", "run.toml", "--out", "a"], dir.path())?;
    igc(&["run", "--config", "run.toml", "--out", "b"], dir.path())?;
    igc(&["run", "--config", "a/manifest.toml", "--out", "c"], dir.path())?;
    let read = |p: &str| std::fs::read(dir.path().join(p)).map_err(|e| e.to_string());
    let a = read("a/metrics.csv")?;
    let same = a == read("b/metrics.csv")? && a == read("c/metrics.csv")?;
    let summaries = read("a/summary.txt")? == read("c/summary.txt")?;
    let rows = a.iter().filter(|&&c| c == b'\n').count() - 1;
    ensure(
        same && summaries && rows == 15,
        format!("three invocations ({rows} rows): metrics byte-identical {same}, summaries identical {summaries}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("compression arithmetic", compression_arithmetic),
        ("ledger equality", ledger_equality),
        ("isometry in expectation", isometry_in_expectation),
        ("dense-oracle equivalence", dense_oracle_equivalence),
        ("trajectory equivalence", trajectory_equivalence),
        ("reconciliation exactness", reconciliation_exactness),
        ("epoch-wise decay", epoch_decay),
        ("end-to-end learning", end_to_end_learning),
        ("gradient-oracle validity", gradient_oracle_validity),
        ("cli determinism", cli_determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filters.is_empty() && !filters.iter().any(|f| *f == n.to_string() || name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS [{name}] {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL [{name}] {detail} ({secs:.1}s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
