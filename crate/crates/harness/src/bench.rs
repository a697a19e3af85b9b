//! Update-time scaling in the number of targets.
//!
//! For each target count the scenario template is re-sized, the initial
//! belief is predicted once and one scan is simulated; only
//! `measurement_update` is timed. Each timing sample repeats the update
//! enough times to last about [`BenchSettings::min_sample_seconds`] and
//! records the time per update; the reported figure is the median over
//! samples.

use std::fmt::Write as _;
use std::time::Instant;

use ksme_core::rng::{substream, Purpose};
use ksme_core::{measurement_update, predict, simulate_step, Belief, Measurements, Truth};
use serde::Serialize;

use crate::config::{ResolvedScenario, ScenarioConfig, TruthLayout};
use crate::error::{HarnessError, Result};
use crate::report::{OutputFormat, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSettings {
    pub samples: usize,
    pub min_sample_seconds: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { samples: 9, min_sample_seconds: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub targets: usize,
    pub median_seconds: f64,
    pub updates_per_sample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `ln t` against `ln N`; absent for one count.
    pub slope: Option<f64>,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

struct Case {
    prior: Belief,
    scan: Measurements,
    resolved: ResolvedScenario,
    reps: usize,
}

impl Case {
    fn prepare(template: &ScenarioConfig, n: usize, settings: &BenchSettings) -> Result<Self> {
        let mut cfg = ScenarioConfig { targets: n, ..template.clone() };
        if matches!(cfg.truth, TruthLayout::Explicit(_)) {
            cfg.truth = TruthLayout::Circle { radius: 1.0 };
        }
        let resolved = cfg.resolve()?;
        let start = Belief::from_target_means(&resolved.initial_truth, resolved.initial_cov.clone())
            .map_err(|e| HarnessError::config("init.C0", e.to_string()))?;
        let prior = predict(&start, &resolved.bank).map_err(|e| HarnessError::Numerical(e.to_string()))?;
        let mut rng = substream(cfg.seed, n as u64, Purpose::Bench);
        let (_, scan) = simulate_step(&Truth::new(resolved.initial_truth.clone()), &resolved.bank, &mut rng)
            .map_err(|e| HarnessError::Numerical(e.to_string()))?;
        let mut case = Self { prior, scan, resolved, reps: 1 };
        let once = case.sample()?.max(1e-9);
        case.reps = ((settings.min_sample_seconds / once).ceil() as usize).max(1);
        Ok(case)
    }

    /// Seconds per update averaged over `self.reps` back-to-back updates.
    fn sample(&self) -> Result<f64> {
        let clock = Instant::now();
        for _ in 0..self.reps {
            let post = measurement_update(&self.prior, &self.scan, &self.resolved.bank, &self.resolved.kernel)
                .map_err(|e| HarnessError::Numerical(e.to_string()))?;
            std::hint::black_box(post);
        }
        Ok(clock.elapsed().as_secs_f64() / self.reps as f64)
    }
}

/// Median `measurement_update` time for each target count.
///
/// Samples are taken round-robin over the target counts so that slow drift
/// in machine speed affects every count alike.
pub fn run_complexity_bench(template: &ScenarioConfig, counts: &[usize], settings: &BenchSettings) -> Result<BenchReport> {
    if counts.is_empty() {
        return Err(HarnessError::config("counts", "at least one target count is required"));
    }
    for (k, n) in counts.iter().enumerate() {
        if *n == 0 {
            return Err(HarnessError::config("counts", "target counts must be positive"));
        }
        if counts[..k].contains(n) {
            return Err(HarnessError::config("counts", format!("target count {n} is repeated")));
        }
    }
    if settings.samples == 0 {
        return Err(HarnessError::config("samples", "must be positive"));
    }
    let cases = counts.iter().map(|&n| Case::prepare(template, n, settings)).collect::<Result<Vec<_>>>()?;
    let mut samples = vec![Vec::with_capacity(settings.samples); cases.len()];
    for _ in 0..settings.samples {
        for (case, out) in cases.iter().zip(&mut samples) {
            out.push(case.sample()?);
        }
    }
    let rows: Vec<BenchRow> = counts
        .iter()
        .zip(&cases)
        .zip(&mut samples)
        .map(|((&targets, case), s)| {
            s.sort_by(f64::total_cmp);
            BenchRow { targets, median_seconds: s[s.len() / 2], updates_per_sample: case.reps }
        })
        .collect();
    let slope = log_log_slope(&rows.iter().map(|r| (r.targets as f64, r.median_seconds)).collect::<Vec<_>>());
    Ok(BenchReport { rows, slope })
}

impl BenchReport {
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => {
                let mut out = format!("# schema_version={SCHEMA_VERSION}\n");
                match self.slope {
                    Some(s) => writeln!(out, "# log_log_slope={s}").unwrap(),
                    None => out.push_str("# log_log_slope=absent\n"),
                }
                out.push_str("targets,median_seconds,updates_per_sample\n");
                for r in &self.rows {
                    writeln!(out, "{},{},{}", r.targets, r.median_seconds, r.updates_per_sample).unwrap();
                }
                out
            }
            OutputFormat::Json => serde_json::to_string_pretty(self).expect("report is serialisable") + "\n",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [5.0, 10.0, 20.0, 40.0].iter().map(|&n: &f64| (n, 2e-6 * n.powi(3))).collect();
        assert!((log_log_slope(&pts).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(log_log_slope(&pts[..1]), None);
    }

    #[test]
    fn single_count_has_no_slope() {
        let settings = BenchSettings { samples: 1, min_sample_seconds: 0.0 };
        let report = run_complexity_bench(&ScenarioConfig::default(), &[3], &settings).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].median_seconds > 0.0);
        assert_eq!(report.slope, None);
        assert!(report.render(OutputFormat::Csv).contains("log_log_slope=absent"));
    }

    #[test]
    fn repeated_counts_are_rejected() {
        let settings = BenchSettings::default();
        let err = run_complexity_bench(&ScenarioConfig::default(), &[5, 10, 5], &settings).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(run_complexity_bench(&ScenarioConfig::default(), &[], &settings).is_err());
    }
}
