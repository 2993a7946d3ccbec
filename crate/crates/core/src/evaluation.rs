//! Fidelity-versus-time evaluation of trained models and multi-run
//! statistics.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{generate_dataset, DatasetError, GenerateOptions, TimeGrid};
use crate::linalg::{self, ComplexMatrix, LinalgError};
use crate::model::{Architecture, ModelParameters};
use crate::pauli::{sample_hamiltonian, Family, HamiltonianSpec, PauliError, SamplingRanges};
use crate::propagators::{Method, PropagatorConfig, PropagatorError, DEFAULT_STEPS};
use crate::training::{self, Strategy, TrainConfig, TrainError};

pub const EVAL_POINTS: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Spec(#[from] PauliError),
    #[error("malformed curve file: {0}")]
    Parse(String),
}

/// `points` times `t_j = j / (points - 1)`, endpoints included.
pub fn eval_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|j| j as f64 / (n - 1) as f64).collect(),
    }
}

/// Ground-truth propagator used for evaluation targets: Magnus-2 up to six
/// qubits and Trotter beyond, both with 50 steps.
pub fn default_target(qubits: usize) -> PropagatorConfig {
    let method = if qubits >= 7 { Method::Trotter } else { Method::Magnus2 };
    PropagatorConfig { method, steps: DEFAULT_STEPS }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub seed: u64,
    pub dt: Option<f64>,
    pub strategy: Strategy,
    pub architecture: Architecture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub times: Vec<f64>,
    pub fidelities_raw: Vec<f64>,
    pub fidelities_svd: Option<Vec<f64>>,
    pub metadata: CurveMetadata,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

impl FidelityCurve {
    pub fn mean_raw(&self) -> f64 {
        mean(&self.fidelities_raw)
    }

    pub fn min_raw(&self) -> f64 {
        min(&self.fidelities_raw)
    }

    pub fn mean_svd(&self) -> Option<f64> {
        self.fidelities_svd.as_deref().map(mean)
    }

    pub fn min_svd(&self) -> Option<f64> {
        self.fidelities_svd.as_deref().map(min)
    }

    /// The SVD-corrected column when present, the raw column otherwise.
    pub fn preferred(&self) -> &[f64] {
        self.fidelities_svd.as_deref().unwrap_or(&self.fidelities_raw)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,f_raw,f_svd\n");
        for (j, t) in self.times.iter().enumerate() {
            let svd = self.fidelities_svd.as_ref().map(|s| s[j].to_string()).unwrap_or_default();
            writeln!(out, "{t},{},{svd}", self.fidelities_raw[j]).unwrap();
        }
        out
    }
}

/// Times and fidelity columns from a curve CSV (metadata is not stored there).
pub fn parse_curve_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>), EvalError> {
    let mut lines = text.lines();
    match lines.next() {
        Some("t,f_raw,f_svd") => {}
        other => return Err(EvalError::Parse(format!("unexpected header {other:?}"))),
    }
    let (mut t, mut raw, mut svd) = (Vec::new(), Vec::new(), Vec::new());
    let mut has_svd = true;
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(EvalError::Parse(format!("row {i}: expected 3 columns")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| EvalError::Parse(format!("row {i}: {e}")));
        t.push(num(cols[0])?);
        raw.push(num(cols[1])?);
        if cols[2].is_empty() {
            has_svd = false;
        } else {
            svd.push(num(cols[2])?);
        }
    }
    Ok((t, raw, if has_svd { Some(svd) } else { None }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub points: usize,
    pub svd_correct: bool,
    pub target: PropagatorConfig,
}

impl EvalOptions {
    pub fn for_qubits(qubits: usize) -> Self {
        Self { points: EVAL_POINTS, svd_correct: true, target: default_target(qubits) }
    }
}

/// Raw and (optionally) nearest-unitary fidelities of `predict(t)` against
/// the target propagator on the evaluation grid.
pub fn evaluate_predictor(
    predict: impl Fn(f64) -> Result<ComplexMatrix, EvalError>,
    spec: &HamiltonianSpec,
    opts: &EvalOptions,
) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>), EvalError> {
    if opts.points == 0 {
        return Err(EvalError::Invalid("evaluation needs at least one point".into()));
    }
    let times = eval_grid(opts.points);
    let mut raw = Vec::with_capacity(times.len());
    let mut svd = Vec::with_capacity(times.len());
    for &t in &times {
        let target = opts.target.propagate(spec, t)?;
        let out = predict(t)?;
        raw.push(linalg::gate_fidelity(target.matrix(), &out)?);
        if opts.svd_correct {
            let projected = linalg::nearest_unitary(&out)?;
            svd.push(linalg::gate_fidelity(target.matrix(), projected.matrix())?);
        }
    }
    Ok((times, raw, opts.svd_correct.then_some(svd)))
}

pub fn evaluate_model(
    params: &ModelParameters,
    spec: &HamiltonianSpec,
    strategy: Strategy,
    integration_steps: usize,
    opts: &EvalOptions,
    metadata: CurveMetadata,
) -> Result<FidelityCurve, EvalError> {
    training::check_compatibility(strategy, params.architecture, spec)?;
    let predict = |t: f64| Ok(training::predict_unitary(params, t, spec, strategy, integration_steps)?);
    let (times, fidelities_raw, fidelities_svd) = evaluate_predictor(predict, spec, opts)?;
    Ok(FidelityCurve { times, fidelities_raw, fidelities_svd, metadata })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub times: Vec<f64>,
    pub f_mu: Vec<f64>,
    pub f_sigma: Vec<f64>,
    pub n_runs: usize,
}

impl StatsSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,f_mu,f_sigma,n_runs\n");
        for j in 0..self.times.len() {
            writeln!(out, "{},{},{},{}", self.times[j], self.f_mu[j], self.f_sigma[j], self.n_runs).unwrap();
        }
        out
    }
}

/// Pointwise mean and sample standard deviation (divisor `n - 1`) of the
/// curves, which must share the time grid.
pub fn summarize(times: &[f64], curves: &[&[f64]]) -> Result<StatsSummary, EvalError> {
    if curves.len() < 2 {
        return Err(EvalError::Invalid(format!("statistics need at least 2 runs, got {}", curves.len())));
    }
    if let Some(c) = curves.iter().find(|c| c.len() != times.len()) {
        return Err(EvalError::Invalid(format!("curve has {} points, grid has {}", c.len(), times.len())));
    }
    let n = curves.len() as f64;
    let f_mu: Vec<f64> = (0..times.len()).map(|j| curves.iter().map(|c| c[j]).sum::<f64>() / n).collect();
    let f_sigma = (0..times.len())
        .map(|j| {
            let ss: f64 = curves.iter().map(|c| (c[j] - f_mu[j]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    Ok(StatsSummary { times: times.to_vec(), f_mu, f_sigma, n_runs: curves.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsConfig {
    pub n_runs: usize,
    pub qubits: usize,
    pub family: Family,
    pub dt: f64,
    pub n_samples: usize,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub base_seed: u64,
    /// Use this seed for every run instead of `base_seed + k`; all runs are
    /// then identical.
    pub pinned_seed: Option<u64>,
    pub ranges: SamplingRanges,
    pub dataset_propagator: PropagatorConfig,
    pub eval: EvalOptions,
    pub workers: usize,
}

impl StatsConfig {
    pub fn run_seed(&self, k: usize) -> u64 {
        self.pinned_seed.unwrap_or(self.base_seed.wrapping_add(k as u64))
    }
}

#[derive(Debug)]
pub struct StatsOutcome {
    /// Indexed by run; `Err` holds the failure message.
    pub runs: Vec<Result<FidelityCurve, String>>,
    /// Summary over the completed runs (absent with fewer than two).
    pub summary: Option<StatsSummary>,
}

impl StatsOutcome {
    pub fn completed(&self) -> Vec<usize> {
        self.runs.iter().enumerate().filter(|(_, r)| r.is_ok()).map(|(k, _)| k).collect()
    }

    pub fn is_partial(&self) -> bool {
        self.runs.iter().any(|r| r.is_err())
    }
}

/// One complete run: fresh Hamiltonian, dataset and training, then evaluation.
pub fn single_run(cfg: &StatsConfig, k: usize) -> Result<FidelityCurve, EvalError> {
    let seed = cfg.run_seed(k);
    let spec = sample_hamiltonian(cfg.qubits, cfg.family, seed, cfg.ranges)?;
    let opts = GenerateOptions { n_samples: cfg.n_samples, seed, propagator: cfg.dataset_propagator, ..Default::default() };
    let data = generate_dataset(&spec, TimeGrid::new(cfg.dt)?, opts)?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let out = training::train(&data, &train_cfg, cfg.architecture)?;
    let metadata =
        CurveMetadata { seed, dt: Some(cfg.dt), strategy: train_cfg.strategy, architecture: cfg.architecture };
    evaluate_model(&out.params, &spec, train_cfg.strategy, train_cfg.integration_steps, &cfg.eval, metadata)
}

/// Runs `cfg.n_runs` independent trainings on up to `cfg.workers` threads.
/// `on_done` sees each finished run (in completion order); results are
/// merged by run index.
pub fn run_statistics(
    cfg: &StatsConfig,
    on_done: impl Fn(usize, &Result<FidelityCurve, String>) + Sync,
) -> Result<StatsOutcome, EvalError> {
    if cfg.n_runs < 2 {
        return Err(EvalError::Invalid(format!("statistics need at least 2 runs, got {}", cfg.n_runs)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| EvalError::Invalid(e.to_string()))?;
    let runs: Vec<Result<FidelityCurve, String>> = pool.install(|| {
        (0..cfg.n_runs)
            .into_par_iter()
            .map(|k| {
                let r = single_run(cfg, k).map_err(|e| e.to_string());
                on_done(k, &r);
                r
            })
            .collect()
    });
    let ok: Vec<&FidelityCurve> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let summary = if ok.len() >= 2 {
        let cols: Vec<&[f64]> = ok.iter().map(|c| c.preferred()).collect();
        Some(summarize(&ok[0].times, &cols)?)
    } else {
        None
    };
    Ok(StatsOutcome { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagators::magnus2_propagator;

    #[test]
    fn grid_has_interpolation_points() {
        let g = eval_grid(100);
        assert_eq!(g.len(), 100);
        assert_eq!((g[0], g[99]), (0.0, 1.0));
        // Points absent from every training grid with dt >= 0.1.
        let off_grid = g.iter().filter(|&&t| ((t * 10.0).round() - t * 10.0).abs() > 1e-9).count();
        assert!(off_grid > 80);
    }

    #[test]
    fn exact_predictions_have_unit_fidelity() {
        let spec = sample_hamiltonian(2, Family::General, 4, SamplingRanges::default()).unwrap();
        let opts = EvalOptions::for_qubits(2);
        let predict = |t: f64| Ok(magnus2_propagator(&spec, t, 50)?.into_inner());
        let (t, raw, svd) = evaluate_predictor(predict, &spec, &opts).unwrap();
        assert_eq!(t.len(), 100);
        for (a, b) in raw.iter().zip(svd.unwrap()) {
            assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_offset_curves_have_sigma_c_over_root_two() {
        let times = eval_grid(5);
        let f = [0.9, 0.8, 0.95, 0.7, 0.99];
        let c = 0.04;
        let g: Vec<f64> = f.iter().map(|x| x + c).collect();
        let s = summarize(&times, &[&f, &g]).unwrap();
        for j in 0..5 {
            assert!((s.f_sigma[j] - c / 2f64.sqrt()).abs() < 1e-12);
            assert!((s.f_mu[j] - (f[j] + c / 2.0)).abs() < 1e-12);
        }
        let same = summarize(&times, &[&f, &f, &f]).unwrap();
        assert!(same.f_sigma.iter().all(|&x| x < 1e-15));
        assert!(summarize(&times, &[&f]).is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let curve = FidelityCurve {
            times: eval_grid(4),
            fidelities_raw: vec![1.0, 0.9, 0.8, 0.123456789012345],
            fidelities_svd: Some(vec![1.0, 0.95, 0.85, 0.8]),
            metadata: CurveMetadata {
                seed: 1,
                dt: Some(0.1),
                strategy: Strategy::DirectUnitary,
                architecture: Architecture::Model2,
            },
        };
        let (t, raw, svd) = parse_curve_csv(&curve.to_csv()).unwrap();
        assert_eq!((t, raw, svd), (curve.times.clone(), curve.fidelities_raw.clone(), curve.fidelities_svd.clone()));
    }

    #[test]
    fn pinned_statistics_have_zero_spread() {
        let cfg = StatsConfig {
            n_runs: 2,
            qubits: 2,
            family: Family::General,
            dt: 0.5,
            n_samples: 30,
            architecture: Architecture::Model2,
            train: TrainConfig { epochs: 2, batches_per_epoch: Some(3), ..Default::default() },
            base_seed: 0,
            pinned_seed: Some(17),
            ranges: SamplingRanges::default(),
            dataset_propagator: PropagatorConfig::default(),
            eval: EvalOptions { points: 10, ..EvalOptions::for_qubits(2) },
            workers: 2,
        };
        let out = run_statistics(&cfg, |_, _| {}).unwrap();
        assert_eq!(out.completed(), vec![0, 1]);
        let s = out.summary.unwrap();
        assert_eq!(s.times.len(), 10);
        assert!(s.f_sigma.iter().all(|&x| x == 0.0));
    }
}
