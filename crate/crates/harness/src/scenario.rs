//! Monte Carlo tracking runs.
//!
//! Run `r` draws its initial filter mean from substream `(r, InitialMean)`
//! and its process noise, measurement noise and scan permutations from
//! `(r, Simulation)`. All trackers see the same truth and scans. Runs are
//! spread over a worker pool and aggregated in run order, so the report is a
//! function of the configuration alone.

use std::time::Instant;

use ksme_core::linalg::psd_factor;
use ksme_core::metrics::extract_points;
use ksme_core::rng::{substream, Purpose};
use ksme_core::{filter_step, gnn_update, oracle_kf_update, ospa, point_estimates, predict, simulate_step};
use ksme_core::{Belief, Measurements, Truth};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InitialMean, ResolvedScenario, ScenarioConfig, TrackerKind};
use crate::error::{HarnessError, Result};
use crate::report::{RunReport, StepSummary, TrackerSeries};

/// Largest fraction of failed runs tolerated before the run counts as a
/// numerical failure.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// A worker pool capped by the `KSME_THREADS` environment variable.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("KSME_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| HarnessError::config("KSME_THREADS", format!("expected a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| HarnessError::Numerical(format!("cannot start worker pool: {e}")))
}

/// Why a run was excluded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub run: usize,
    pub step: usize,
    pub tracker: Option<TrackerKind>,
    pub message: String,
}

/// Per-tracker traces of one run, indexed by step.
#[derive(Debug, Clone)]
struct RunTrace {
    ospa: Vec<Vec<f64>>,
    seconds: Vec<Vec<f64>>,
    min_eig: Vec<f64>,
}

fn step_tracker(kind: TrackerKind, belief: &Belief, scan: &Measurements, s: &ResolvedScenario) -> ksme_core::Result<Belief> {
    match kind {
        TrackerKind::KernelSme => filter_step(belief, scan, &s.bank, &s.kernel),
        TrackerKind::Gnn => gnn_update(&predict(belief, &s.bank)?, scan, &s.bank),
        TrackerKind::OracleKf => oracle_kf_update(&predict(belief, &s.bank)?, scan, &s.bank),
        TrackerKind::PredictOnly => predict(belief, &s.bank),
    }
}

fn initial_belief(cfg: &ScenarioConfig, s: &ResolvedScenario, run: usize) -> Result<Belief> {
    let truth = Truth::new(s.initial_truth.clone()).stacked();
    let mean = match &cfg.initial_mean {
        InitialMean::Truth => truth,
        InitialMean::Explicit(rows) => DVector::from_iterator(truth.len(), rows.iter().flatten().copied()),
        InitialMean::Sampled => {
            let mut rng = substream(cfg.seed, run as u64, Purpose::InitialMean);
            let z = DVector::from_fn(truth.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            truth + psd_factor(&s.initial_cov) * z
        }
    };
    Belief::new(mean, s.initial_cov.clone(), cfg.targets).map_err(|e| HarnessError::config("init", e.to_string()))
}

fn execute_run(cfg: &ScenarioConfig, s: &ResolvedScenario, run: usize) -> std::result::Result<RunTrace, RunFailure> {
    let fail = |step, tracker, message: String| RunFailure { run, step, tracker, message };
    let start = initial_belief(cfg, s, run).map_err(|e| fail(0, None, e.to_string()))?;
    let mut beliefs = vec![start; cfg.trackers.len()];
    let mut trace = RunTrace {
        ospa: vec![Vec::with_capacity(cfg.horizon); cfg.trackers.len()],
        seconds: vec![Vec::with_capacity(cfg.horizon); cfg.trackers.len()],
        min_eig: vec![f64::INFINITY; cfg.trackers.len()],
    };
    let mut truth = Truth::new(s.initial_truth.clone());
    let mut rng = substream(cfg.seed, run as u64, Purpose::Simulation);
    for step in 1..=cfg.horizon {
        let (next, scan) = simulate_step(&truth, &s.bank, &mut rng).map_err(|e| fail(step, None, e.to_string()))?;
        truth = next;
        let truth_points = extract_points(&truth.states, &s.bank, s.extraction).map_err(|e| fail(step, None, e.to_string()))?;
        for (t, &kind) in cfg.trackers.iter().enumerate() {
            let clock = Instant::now();
            let updated = step_tracker(kind, &beliefs[t], &scan, s).map_err(|e| fail(step, Some(kind), e.to_string()))?;
            trace.seconds[t].push(clock.elapsed().as_secs_f64());
            let points = point_estimates(&updated, &s.bank, s.extraction).map_err(|e| fail(step, Some(kind), e.to_string()))?;
            let d = ospa(&points, &truth_points, s.ospa).map_err(|e| fail(step, Some(kind), e.to_string()))?;
            if !d.is_finite() {
                return Err(fail(step, Some(kind), "non-finite OSPA".into()));
            }
            trace.ospa[t].push(d);
            trace.min_eig[t] = trace.min_eig[t].min(updated.normalized_min_eigenvalue());
            beliefs[t] = updated;
        }
    }
    Ok(trace)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Runs every configured tracker over `config.runs` seeded simulations and
/// aggregates OSPA per step.
///
/// A run in which any tracker fails is excluded for all trackers and listed
/// in [`RunReport::failures`]. Fails outright only when no run succeeds;
/// callers decide what to do with a high failure fraction.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport> {
    let resolved = config.resolve()?;
    let pool = worker_pool()?;
    let outcomes: Vec<_> =
        pool.install(|| (0..config.runs).into_par_iter().map(|r| execute_run(config, &resolved, r)).collect());

    let mut traces = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(t) => traces.push(t),
            Err(f) => failures.push(f),
        }
    }
    if traces.is_empty() {
        let first = failures.first().map_or(String::new(), |f| f.message.clone());
        return Err(HarnessError::Numerical(format!("all {} runs failed; first error: {first}", config.runs)));
    }

    let series = config
        .trackers
        .iter()
        .enumerate()
        .map(|(t, &tracker)| {
            let per_run: Vec<Vec<f64>> = traces.iter().map(|tr| tr.ospa[t].clone()).collect();
            let rows = (0..config.horizon)
                .map(|k| {
                    let column: Vec<f64> = per_run.iter().map(|r| r[k]).collect();
                    let (mean_ospa, se_ospa) = mean_and_se(&column);
                    StepSummary { step: k + 1, mean_ospa, se_ospa, runs: column.len() }
                })
                .collect();
            let mut times: Vec<f64> = traces.iter().flat_map(|tr| tr.seconds[t].iter().copied()).collect();
            let mean_update_seconds = times.iter().sum::<f64>() / times.len() as f64;
            TrackerSeries {
                tracker,
                rows,
                per_run,
                mean_update_seconds,
                median_update_seconds: median(&mut times),
                worst_normalized_min_eigenvalue: traces.iter().map(|tr| tr.min_eig[t]).fold(f64::INFINITY, f64::min),
            }
        })
        .collect();

    Ok(RunReport { config: config.clone(), runs_attempted: config.runs, failures, series })
}
