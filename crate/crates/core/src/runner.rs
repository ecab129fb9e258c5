//! Run, probe and compare operations over resolved configs, producing the
//! text artifacts the front ends write out.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{content_hash, ModelKind, ProbeConfig, ProbeKind, RunConfig, RunManifest};
use crate::error::{Error, Result};
use crate::experiments::{
    estimate_intrinsic_rho, probe_ksubspace, probe_static, probe_time_varying, tv_vs_static, ProbeRun,
    Trajectory,
};
use crate::federation::{
    compression_ratio, dry_run, run_experiment, CompressionRatios, DataPartition, ExperimentResult,
};
use crate::models::{
    load_idx_dataset, read_checkpoint, GradientOracle, LogisticModel, MlpModel, QuadraticProblem,
};
use crate::report::{run_summary, write_compare, write_metrics, CompareRow, KeyValues, Report};

pub struct BuiltModel {
    pub oracle: Arc<dyn GradientOracle>,
    /// Hash of the model and dataset settings, used to refuse comparing
    /// runs on different problems.
    pub fingerprint: String,
}

/// Hash of the config keys that define the model and its data.
pub fn model_fingerprint(cfg: &RunConfig) -> String {
    let mut kv = KeyValues::default();
    if cfg.dry_run {
        kv.push("dry_run_dim", cfg.accounting_dim().unwrap_or(0));
    } else {
        kv.push("model", format!("{:?}", cfg.model));
        match cfg.model {
            ModelKind::Quadratic => {
                kv.push("quad_dim", cfg.quad_dim);
                kv.push("quad_dominant", cfg.quad_dominant);
                kv.push("quad_dominant_value", cfg.quad_dominant_value);
                kv.push("quad_tail_value", cfg.quad_tail_value);
                kv.push("noise_var", cfg.noise_var);
                kv.push("data_seed", cfg.data_seed);
            }
            ModelKind::Logistic | ModelKind::Mlp => {
                if cfg.model == ModelKind::Mlp {
                    kv.push("hidden", cfg.hidden);
                }
                let spec = toml::to_string(&cfg.blob_spec()).expect("blob spec serializes");
                let idx = [&cfg.train_images, &cfg.train_labels, &cfg.test_images, &cfg.test_labels];
                match idx.iter().all(|p| p.is_some()) {
                    true => idx.iter().for_each(|p| kv.push("idx", p.as_ref().unwrap().display())),
                    false => kv.push("blobs", spec.replace('\n', ";")),
                }
            }
        }
    }
    content_hash(&kv.render())
}

/// Builds the gradient oracle a config describes. The quadratic's spectrum
/// and optimum are drawn from `data_seed`.
pub fn build_model(cfg: &RunConfig) -> Result<BuiltModel> {
    let oracle: Arc<dyn GradientOracle> = match cfg.model {
        ModelKind::Quadratic => Arc::new(
            QuadraticProblem::dominant_spectrum(
                cfg.quad_dim,
                cfg.quad_dominant,
                cfg.quad_dominant_value,
                cfg.quad_tail_value,
                cfg.data_seed,
            )?
            .with_noise(cfg.noise_var)?,
        ),
        ModelKind::Logistic | ModelKind::Mlp => {
            let (train, test) = match cfg.idx_paths()? {
                Some([ti, tl, vi, vl]) => {
                    let classes = Some(cfg.classes);
                    let train = load_idx_dataset(ti, tl, classes)?;
                    let test = load_idx_dataset(vi, vl, classes)?;
                    (train, test)
                }
                None => {
                    let data = cfg.blob_spec().generate()?;
                    (data.train, data.test)
                }
            };
            let (train, test) = (Arc::new(train), Arc::new(test));
            if cfg.model == ModelKind::Logistic {
                Arc::new(LogisticModel::new(train, test))
            } else {
                let layers = [train.num_features(), cfg.hidden, train.num_classes()];
                Arc::new(MlpModel::new(&layers, train, test)?)
            }
        }
    };
    Ok(BuiltModel {
        oracle,
        fingerprint: model_fingerprint(cfg),
    })
}

/// `θ₀` from the configured checkpoint, or the model's seeded initialization.
pub fn initial_parameters(cfg: &RunConfig, oracle: &dyn GradientOracle) -> Result<Vec<f64>> {
    match &cfg.theta0 {
        Some(path) => {
            let theta = read_checkpoint(path)?;
            if theta.len() != oracle.dim() {
                return Err(Error::config(
                    "theta0",
                    format!("checkpoint holds {} values, model has {}", theta.len(), oracle.dim()),
                ));
            }
            Ok(theta)
        }
        None => Ok(oracle.initial_parameters(cfg.seed)),
    }
}

/// Everything a run produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub result: ExperimentResult,
    pub ratios: Option<CompressionRatios>,
    pub fingerprint: String,
    /// Contents of `metrics.csv`.
    pub metrics_csv: String,
    /// Contents of `summary.txt`.
    pub summary: String,
    /// Contents of `manifest.toml`.
    pub manifest_toml: String,
}

pub fn execute_run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let fed = cfg.federation();
    let (result, fingerprint) = if cfg.dry_run {
        let dim = cfg
            .accounting_dim()
            .ok_or_else(|| Error::config("dry_run_dim", "needed when the model size depends on data files"))?;
        (dry_run(&fed, dim)?, model_fingerprint(cfg))
    } else {
        let model = build_model(cfg)?;
        let theta0 = initial_parameters(cfg, model.oracle.as_ref())?;
        let partition = match model.oracle.training_labels() {
            Some(labels) => DataPartition::new(cfg.partition, labels, cfg.clients, cfg.seed)?,
            None => DataPartition::data_free(cfg.clients),
        };
        (run_experiment(&fed, model.oracle, partition, theta0)?, model.fingerprint)
    };
    let ratios = compression_ratio(result.big_dim, &result.ledger).ok();
    let manifest = RunManifest::new(cfg.clone());
    Ok(RunOutput {
        metrics_csv: write_metrics(&result.rows),
        summary: run_summary(&result, ratios.as_ref(), &manifest.config_hash).render(),
        manifest_toml: manifest.to_toml(),
        manifest,
        result,
        ratios,
        fingerprint,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutput {
    pub config_hash: String,
    pub report: Report,
    /// Contents of `report.txt`.
    pub text: String,
}

fn probe_problem(cfg: &ProbeConfig) -> Result<Arc<QuadraticProblem>> {
    Ok(Arc::new(
        QuadraticProblem::dominant_spectrum(cfg.dim, cfg.dominant, cfg.dominant_value, cfg.tail_value, cfg.problem_seed)?
            .with_noise(cfg.noise_var)?,
    ))
}

fn trajectory_report(traj: &Trajectory, rho_median: f64) -> Result<Report> {
    let fit = traj.fit()?;
    let mut summary = KeyValues::default();
    summary.push("initial_gap", traj.initial_gap);
    summary.push("final_gap", traj.final_gap());
    summary.push("slope", fit.slope);
    summary.push("r_squared", fit.r_squared);
    summary.push("rho_median", rho_median);
    Ok(Report {
        header: "epoch,end_gap".into(),
        records: traj
            .checkpoints()
            .iter()
            .enumerate()
            .map(|(e, g)| vec![e.to_string(), g.to_string()])
            .collect(),
        summary,
    })
}

pub fn execute_probe(cfg: &ProbeConfig) -> Result<ProbeOutput> {
    cfg.validate()?;
    let problem = probe_problem(cfg)?;
    let theta0 = vec![0.0; cfg.dim];
    let rho = estimate_intrinsic_rho(&problem, &theta0, cfg.dimension, cfg.trials, cfg.projection, cfg.seed)?;
    let run = ProbeRun {
        problem,
        theta0,
        d: cfg.dimension,
        lr: cfg.lr,
        kind: cfg.projection,
        seed: cfg.seed,
    };
    let total_steps = cfg.epochs * cfg.steps;
    let report = match cfg.probe {
        ProbeKind::Rho => {
            let mut summary = KeyValues::default();
            summary.push("trials", rho.fractions.len());
            summary.push("rho_median", rho.median);
            summary.push("rho_mean", rho.mean);
            summary.push("std_error", rho.std_error);
            summary.push("pseudo_inverse_trials", rho.pseudo_inverse_trials);
            Report {
                header: "trial,fraction".into(),
                records: rho
                    .fractions
                    .iter()
                    .enumerate()
                    .map(|(t, f)| vec![t.to_string(), f.to_string()])
                    .collect(),
                summary,
            }
        }
        ProbeKind::Static => trajectory_report(&probe_static(&run, total_steps)?, rho.median)?,
        ProbeKind::TimeVarying => {
            trajectory_report(&probe_time_varying(&run, cfg.epochs, cfg.steps)?, rho.median)?
        }
        ProbeKind::KSubspace => trajectory_report(
            &probe_ksubspace(&run, cfg.subspaces, cfg.clients, total_steps)?,
            rho.median,
        )?,
        ProbeKind::CompareTv => {
            let pairs = tv_vs_static(&run, cfg.epochs, cfg.steps, cfg.trials)?;
            let wins = pairs.iter().filter(|(s, t)| t <= s).count();
            let mut summary = KeyValues::default();
            summary.push("trials", pairs.len());
            summary.push("tv_win_fraction", wins as f64 / pairs.len() as f64);
            summary.push("rho_median", rho.median);
            Report {
                header: "trial,static_gap,tv_gap".into(),
                records: pairs
                    .iter()
                    .enumerate()
                    .map(|(i, (s, t))| vec![i.to_string(), s.to_string(), t.to_string()])
                    .collect(),
                summary,
            }
        }
    };
    Ok(ProbeOutput {
        config_hash: cfg.hash(),
        text: report.render(),
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareOutput {
    pub rows: Vec<CompareRow>,
    /// Contents of `compare.csv`.
    pub table: String,
}

/// Runs every labeled config and tabulates final metric against compression.
pub fn execute_compare(entries: &[(String, RunConfig)]) -> Result<CompareOutput> {
    if entries.len() < 2 {
        return Err(Error::Comparison(format!(
            "need at least two configs, got {}",
            entries.len()
        )));
    }
    let reference = model_fingerprint(&entries[0].1);
    if let Some((label, _)) = entries.iter().find(|(_, c)| model_fingerprint(c) != reference) {
        return Err(Error::Comparison(format!(
            "`{label}` uses a different model or dataset than `{}`",
            entries[0].0
        )));
    }
    let rows = entries
        .iter()
        .map(|(label, cfg)| {
            let out = execute_run(cfg)?;
            Ok(CompareRow {
                label: label.clone(),
                algorithm: out.result.algorithm.to_string(),
                metric: out.result.metric_name.clone(),
                final_metric: out.result.final_metric(),
                ratios: out.ratios,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareOutput {
        table: write_compare(&rows),
        rows,
    })
}
