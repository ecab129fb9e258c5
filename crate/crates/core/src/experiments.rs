//! Empirical probes of intrinsic dimension and of subspace-SGD convergence
//! on convex quadratics.
//!
//! The probes check directional claims (decay shape, orderings,
//! degeneracies), not constants; slack factors are the named constants below.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compressors::{
    ksub_assign, ksub_compress, static_compress, tv_compress, KSubspaceServer, ProjectionFactory,
    StaticServer, TimeVaryingServer,
};
use crate::error::{Error, Result};
use crate::models::{GradientOracle, QuadraticProblem};
use crate::projection::{materialize, SubspaceKind};
use crate::rng::{keyed_rng, mix_path, DOMAIN_ASSIGN, DOMAIN_PROBE};

/// Slack on `ρ^E·(initial gap)` for the time-varying decay check.
pub const DECAY_SLACK: f64 = 3.0;
/// Minimum `R²` of the log-gap linear fit.
pub const MIN_R_SQUARED: f64 = 0.8;
/// Fraction of paired trials time-varying must win.
pub const MIN_WIN_FRACTION: f64 = 0.8;
/// Fewest trials behind any statistical assertion.
pub const MIN_TRIALS: usize = 30;
/// Allowed ratio of the K-subspace final gap to the static one at equal upload.
pub const KSUB_GAP_FACTOR: f64 = 2.0;
/// A probe aborts once the gap exceeds this multiple of the initial gap.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Minimizer of a quadratic over the affine subspace `θ₀ + span(M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RestrictedMinimum {
    pub theta: Vec<f64>,
    pub gap: f64,
    /// The restricted Hessian was singular and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// Exact minimum of `problem` over `θ₀ + span([M₁ … M_K])`.
///
/// The restricted objective is quadratic in the coordinates `s`, so the
/// minimizer solves `(MᵀΛM) s = −MᵀΛ(θ₀ − θ*)`.
pub fn restricted_minimum(
    problem: &QuadraticProblem,
    theta0: &[f64],
    bases: &[DMatrix<f64>],
) -> Result<RestrictedMinimum> {
    let big = problem.spectrum().len();
    let cols: usize = bases.iter().map(|b| b.ncols()).sum();
    if cols == 0 {
        return Ok(RestrictedMinimum {
            theta: theta0.to_vec(),
            gap: problem.value(theta0),
            pseudo_inverse: false,
        });
    }
    let mut m = DMatrix::zeros(big, cols);
    let mut at = 0;
    for b in bases {
        if b.nrows() != big {
            return Err(Error::DimensionMismatch { expected: big, actual: b.nrows() });
        }
        m.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    let lambda = DVector::from_column_slice(problem.spectrum());
    let offset = DVector::from_iterator(big, theta0.iter().zip(problem.optimum()).map(|(t, o)| t - o));
    let weighted = DMatrix::from_fn(big, cols, |i, j| lambda[i] * m[(i, j)]);
    let hessian = m.transpose() * &weighted;
    let rhs = -(weighted.transpose() * offset);
    let (s, pseudo_inverse) = match Cholesky::new(hessian.clone()) {
        Some(ch) if well_conditioned(&ch) => (ch.solve(&rhs), false),
        _ => {
            let svd = hessian.svd(true, true);
            let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
            let s = svd
                .solve(&rhs, eps)
                .map_err(|e| Error::invalid(format!("restricted solve failed: {e}")))?;
            (s, true)
        }
    };
    let step = &m * s;
    let theta: Vec<f64> = theta0.iter().zip(step.iter()).map(|(t, d)| t + d).collect();
    Ok(RestrictedMinimum {
        gap: problem.value(&theta),
        theta,
        pseudo_inverse,
    })
}

fn well_conditioned(ch: &Cholesky<f64, nalgebra::Dyn>) -> bool {
    let diag = ch.l_dirty().diagonal();
    let max = diag.max();
    let min = diag.min();
    min > 1e-7 * max
}

/// Empirical distribution of the best achievable gap fraction in a random
/// `d`-dimensional affine subspace through `θ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    /// `min(g(θ̂), g(θ₀)) − g*` over `g(θ₀) − g*`, one per trial.
    pub fractions: Vec<f64>,
    /// Trials that needed the pseudo-inverse path.
    pub pseudo_inverse_trials: usize,
    pub median: f64,
    pub mean: f64,
    pub std_error: f64,
}

impl RhoEstimate {
    fn from_fractions(fractions: Vec<f64>, pseudo_inverse_trials: usize) -> Self {
        let n = fractions.len() as f64;
        let mut sorted = fractions.clone();
        sorted.sort_by(f64::total_cmp);
        let median = match sorted.len() {
            0 => f64::NAN,
            len if len % 2 == 1 => sorted[len / 2],
            len => 0.5 * (sorted[len / 2 - 1] + sorted[len / 2]),
        };
        let mean = fractions.iter().sum::<f64>() / n;
        let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            fractions,
            pseudo_inverse_trials,
            median,
            mean,
            std_error: (var / n).sqrt(),
        }
    }

    /// `(ρ, δ)` pairs: with probability `1 − δ` a random subspace reaches
    /// fraction `ρ` or better.
    pub fn curve(&self) -> Vec<(f64, f64)> {
        let mut sorted = self.fractions.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        sorted
            .iter()
            .enumerate()
            .map(|(i, &rho)| (rho, 1.0 - (i + 1) as f64 / n))
            .collect()
    }
}

/// Fraction of the initial gap left at the best point of `θ₀ + span(M)`.
pub fn gap_fraction(problem: &QuadraticProblem, theta0: &[f64], bases: &[DMatrix<f64>]) -> Result<(f64, bool)> {
    let initial = problem.value(theta0);
    if bases.iter().all(|b| b.ncols() == 0) {
        return Ok((1.0, false));
    }
    if initial == 0.0 {
        return Ok((0.0, false));
    }
    let best = restricted_minimum(problem, theta0, bases)?;
    Ok((best.gap.min(initial) / initial, best.pseudo_inverse))
}

/// Draws `trials` subspaces of dimension `d` and records the gap fraction
/// of the exact restricted minimum in each.
pub fn estimate_intrinsic_rho(
    problem: &QuadraticProblem,
    theta0: &[f64],
    d: usize,
    trials: usize,
    kind: SubspaceKind,
    seed: u64,
) -> Result<RhoEstimate> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let big = problem.spectrum().len();
    let results: Vec<(f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            if d == 0 {
                return Ok((1.0, false));
            }
            let a = kind.build(trial_seed(seed, t), big, d)?;
            gap_fraction(problem, theta0, &[materialize(a.as_ref())?])
        })
        .collect::<Result<_>>()?;
    let flagged = results.iter().filter(|r| r.1).count();
    Ok(RhoEstimate::from_fractions(results.into_iter().map(|r| r.0).collect(), flagged))
}

/// Master seed of trial `t` under `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    mix_path(seed, &[DOMAIN_PROBE, t as u64])
}

/// Least-squares line through `(x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn log_linear_fit(ys: &[f64]) -> Result<LogLinearFit> {
    if ys.len() < 2 {
        return Err(Error::invalid("log-linear fit needs at least two points"));
    }
    let n = ys.len() as f64;
    let logs: Vec<f64> = ys.iter().map(|y| y.max(f64::MIN_POSITIVE).ln()).collect();
    let mx = (n - 1.0) / 2.0;
    let my = logs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, l) in logs.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (l - my);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = logs
        .iter()
        .enumerate()
        .map(|(i, l)| (l - (intercept + slope * i as f64)).powi(2))
        .sum();
    let ss_tot: f64 = logs.iter().map(|l| (l - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LogLinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Gap trajectory of a subspace-SGD run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_gap: f64,
    /// Gap after every server step.
    pub step_gaps: Vec<f64>,
    /// Gap at the end of every epoch; a single entry for static and
    /// K-subspace runs.
    pub epoch_gaps: Vec<f64>,
}

impl Trajectory {
    pub fn final_gap(&self) -> f64 {
        self.step_gaps.last().copied().unwrap_or(self.initial_gap)
    }

    /// `[initial, end of epoch 1, …, end of epoch E]`.
    pub fn checkpoints(&self) -> Vec<f64> {
        std::iter::once(self.initial_gap).chain(self.epoch_gaps.iter().copied()).collect()
    }

    /// Log-linear fit over [`Trajectory::checkpoints`].
    pub fn fit(&self) -> Result<LogLinearFit> {
        log_linear_fit(&self.checkpoints())
    }
}

/// Shared settings of the subspace-SGD probes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRun {
    pub problem: Arc<QuadraticProblem>,
    pub theta0: Vec<f64>,
    pub d: usize,
    pub lr: f64,
    pub kind: SubspaceKind,
    pub seed: u64,
}

impl ProbeRun {
    fn factory(&self) -> Arc<ProjectionFactory> {
        Arc::new(ProjectionFactory::new(self.kind, self.seed, self.problem.spectrum().len(), self.d))
    }

    fn gradient(&self, theta: &[f64], step: u64, client: u64) -> Vec<f64> {
        let mut rng = keyed_rng(self.seed, &[DOMAIN_PROBE, step, client]);
        self.problem.loss_and_grad(theta, &[], &mut rng).grad
    }

    fn check(&self, gap: f64, initial: f64, step: usize) -> Result<f64> {
        if !gap.is_finite() || gap > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence {
                step,
                loss: gap,
                initial,
            });
        }
        Ok(gap)
    }

    fn gap(&self, theta: &[f64]) -> f64 {
        self.problem.value(theta) - self.problem.minimum()
    }
}

/// Single-client static compression for `steps` steps. Gradients are taken
/// at the materialized server parameters, which a lone client's reconciled
/// copy equals.
pub fn probe_static(run: &ProbeRun, steps: usize) -> Result<Trajectory> {
    let factory = run.factory();
    let theta0 = Arc::new(run.theta0.clone());
    let mut server = StaticServer::new(factory.matrix(0)?, theta0.clone())?;
    let initial = run.gap(&theta0);
    let mut theta = theta0.to_vec();
    let mut gaps = Vec::with_capacity(steps);
    for t in 0..steps {
        let g = run.gradient(&theta, t as u64, 0);
        let sketch = static_compress(0, server.projection().as_ref(), &g)?;
        server.step(&[sketch], run.lr)?;
        theta = server.parameters()?;
        gaps.push(run.check(run.gap(&theta), initial, t)?);
    }
    Ok(Trajectory {
        initial_gap: initial,
        epoch_gaps: vec![gaps.last().copied().unwrap_or(initial)],
        step_gaps: gaps,
    })
}

/// Single-client time-varying compression over `epochs` epochs.
pub fn probe_time_varying(run: &ProbeRun, epochs: usize, steps_per_epoch: usize) -> Result<Trajectory> {
    let factory = run.factory();
    let theta0 = Arc::new(run.theta0.clone());
    let mut server = TimeVaryingServer::new(factory.clone(), theta0.clone(), 1)?;
    let initial = run.gap(&theta0);
    let mut theta = theta0.to_vec();
    let mut gaps = Vec::with_capacity(epochs * steps_per_epoch);
    let mut epoch_gaps = Vec::with_capacity(epochs);
    for e in 0..epochs {
        if e > 0 {
            server.advance_epoch()?;
        }
        for _ in 0..steps_per_epoch {
            let t = gaps.len();
            let g = run.gradient(&theta, t as u64, 0);
            let sketch = tv_compress(0, &factory, 1, e, 0, &g)?;
            server.step(&[sketch], run.lr)?;
            theta = server.parameters()?;
            gaps.push(run.check(run.gap(&theta), initial, t)?);
        }
        epoch_gaps.push(gaps.last().copied().unwrap_or(initial));
    }
    Ok(Trajectory {
        initial_gap: initial,
        step_gaps: gaps,
        epoch_gaps,
    })
}

/// K-subspace compression with `clients` gradients per step, each client
/// uploading into a uniformly drawn subspace.
pub fn probe_ksubspace(run: &ProbeRun, subspaces: usize, clients: usize, steps: usize) -> Result<Trajectory> {
    if clients == 0 {
        return Err(Error::invalid("need at least one client per step"));
    }
    let factory = run.factory();
    let theta0 = Arc::new(run.theta0.clone());
    let matrices = (0..subspaces as u64).map(|k| factory.matrix(k)).collect::<Result<Vec<_>>>()?;
    let mut server = KSubspaceServer::new(matrices.clone(), theta0.clone())?;
    let initial = run.gap(&theta0);
    let mut theta = theta0.to_vec();
    let mut gaps = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut sketches = Vec::with_capacity(clients);
        for c in 0..clients {
            let g = run.gradient(&theta, t as u64, c as u64);
            let k = ksub_assign(&mut keyed_rng(run.seed, &[DOMAIN_ASSIGN, t as u64, c as u64]), subspaces);
            sketches.push(ksub_compress(c, matrices[k].as_ref(), k, &g)?);
        }
        server.step(&sketches, run.lr)?;
        theta = server.parameters()?;
        gaps.push(run.check(run.gap(&theta), initial, t)?);
    }
    Ok(Trajectory {
        initial_gap: initial,
        epoch_gaps: vec![gaps.last().copied().unwrap_or(initial)],
        step_gaps: gaps,
    })
}

/// Materialized subspaces a probe run draws: index `0..count`.
pub fn probe_bases(run: &ProbeRun, count: usize) -> Result<Vec<DMatrix<f64>>> {
    let factory = run.factory();
    (0..count as u64)
        .map(|i| materialize(factory.matrix(i)?.as_ref()))
        .collect()
}

/// Final gaps of paired static and time-varying runs with equal `d` and
/// equal total steps, one pair per trial seed.
pub fn tv_vs_static(
    run: &ProbeRun,
    epochs: usize,
    steps_per_epoch: usize,
    trials: usize,
) -> Result<Vec<(f64, f64)>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial = ProbeRun {
                seed: trial_seed(run.seed, t),
                ..run.clone()
            };
            let st = probe_static(&trial, epochs * steps_per_epoch)?.final_gap();
            let tv = probe_time_varying(&trial, epochs, steps_per_epoch)?.final_gap();
            Ok((st, tv))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(dim: usize, dominant: usize) -> Arc<QuadraticProblem> {
        Arc::new(QuadraticProblem::dominant_spectrum(dim, dominant, 1.0, 0.01, 5).unwrap())
    }

    fn probe(dim: usize, d: usize, lr: f64) -> ProbeRun {
        ProbeRun {
            problem: problem(dim, 4),
            theta0: vec![0.0; dim],
            d,
            lr,
            kind: SubspaceKind::Auto,
            seed: 42,
        }
    }

    #[test]
    fn rho_edges() {
        let p = problem(20, 3);
        let theta0 = vec![0.0; 20];
        let full = estimate_intrinsic_rho(&p, &theta0, 20, 10, SubspaceKind::Auto, 1).unwrap();
        assert!(full.fractions.iter().all(|&f| f < 1e-12), "{:?}", full.fractions);
        let empty = estimate_intrinsic_rho(&p, &theta0, 0, 5, SubspaceKind::Auto, 1).unwrap();
        assert!(empty.fractions.iter().all(|&f| f == 1.0));
        let some = estimate_intrinsic_rho(&p, &theta0, 5, 40, SubspaceKind::Fastfood, 1).unwrap();
        assert!(some.fractions.iter().all(|&f| (0.0..=1.0).contains(&f)));
        assert_eq!(some.fractions.len(), 40);
    }

    /// With `d = 1` the restricted problem is one-dimensional:
    /// `s* = −aᵀΛ(θ₀ − θ*) / aᵀΛa`.
    #[test]
    fn one_dimensional_closed_form_and_dominant_median() {
        let p = QuadraticProblem::dominant_spectrum(50, 1, 1.0, 0.001, 9).unwrap();
        let theta0 = vec![0.0; 50];
        for t in 0..5 {
            let a = SubspaceKind::Dense.build(trial_seed(3, t), 50, 1).unwrap();
            let col: Vec<f64> = materialize(a.as_ref()).unwrap().column(0).iter().copied().collect();
            let lam = p.spectrum();
            let num: f64 = (0..50).map(|i| col[i] * lam[i] * (theta0[i] - p.optimum()[i])).sum();
            let den: f64 = (0..50).map(|i| col[i] * lam[i] * col[i]).sum();
            let s = -num / den;
            let theta: Vec<f64> = col.iter().map(|c| s * c).collect();
            let expect = p.value(&theta) / p.value(&theta0);
            let (got, _) = gap_fraction(&p, &theta0, &[materialize(a.as_ref()).unwrap()]).unwrap();
            assert!((got - expect).abs() < 1e-10);
        }
        let est = estimate_intrinsic_rho(&p, &theta0, 1, 101, SubspaceKind::Dense, 3).unwrap();
        assert!(est.median < 0.5, "median {}", est.median);
    }

    #[test]
    fn singular_hessian_takes_pseudo_inverse() {
        let p = QuadraticProblem::new(vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap();
        let basis = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let r = restricted_minimum(&p, &[0.0; 3], &[basis]).unwrap();
        assert!(r.pseudo_inverse);
        assert_eq!(r.gap, 0.5);
    }

    #[test]
    fn fit_of_exact_geometric_sequence() {
        let ys: Vec<f64> = (0..6).map(|i| 3.0 * 0.5f64.powi(i)).collect();
        let f = log_linear_fit(&ys).unwrap();
        assert!((f.slope - 0.5f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(log_linear_fit(&[1.0]).is_err());
    }

    #[test]
    fn static_probe_properties() {
        let run = probe(32, 6, 0.5);
        let traj = probe_static(&run, 300).unwrap();
        assert!(traj.step_gaps.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let best = restricted_minimum(&run.problem, &run.theta0, &probe_bases(&run, 1).unwrap()).unwrap();
        assert!((traj.final_gap() - best.gap).abs() <= 0.01 * best.gap, "{} vs {}", traj.final_gap(), best.gap);

        let frozen = probe_static(&ProbeRun { lr: 0.0, ..run.clone() }, 10).unwrap();
        assert_eq!(frozen.final_gap(), frozen.initial_gap);

        let diverging = probe_static(&ProbeRun { lr: 50.0, ..run }, 100);
        assert!(matches!(diverging, Err(Error::Divergence { .. })));
    }

    #[test]
    fn single_epoch_time_varying_is_static() {
        let run = probe(32, 6, 0.3);
        let st = probe_static(&run, 25).unwrap();
        let tv = probe_time_varying(&run, 1, 25).unwrap();
        assert_eq!(st, tv);
    }

    #[test]
    fn single_subspace_ksub_is_static() {
        let run = probe(32, 6, 0.3);
        assert_eq!(probe_ksubspace(&run, 1, 1, 25).unwrap(), probe_static(&run, 25).unwrap());
    }

    #[test]
    fn ksub_reaches_concatenated_optimum() {
        let run = probe(32, 4, 0.5);
        let traj = probe_ksubspace(&run, 4, 4, 3_000).unwrap();
        let best = restricted_minimum(&run.problem, &run.theta0, &probe_bases(&run, 4).unwrap()).unwrap();
        assert!((traj.final_gap() - best.gap).abs() <= 0.01 * best.gap.max(1e-12), "{} vs {}", traj.final_gap(), best.gap);
        let mut previous = f64::INFINITY;
        for k in 1..=6 {
            let gap = restricted_minimum(&run.problem, &run.theta0, &probe_bases(&run, k).unwrap()).unwrap().gap;
            assert!(gap <= previous + 1e-12);
            previous = gap;
        }
    }
}
