//! Exit criteria for the tracker. Each test prints one `[PASS]`/`[FAIL]` line
//! straight to stdout, so the verdicts show up without `--nocapture`.
//!
//! Tests share one lock: the complexity fit is a wall-clock measurement and
//! must not compete with the other criteria for the CPU.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use ksme_core::kernel::{measurement_update, phd_convolved_with_kernel, pseudo_moments, KernelConfig};
use ksme_core::metrics::ospa_cost_matrix;
use ksme_core::model::{stack_models, MeasurementSet, MultiTargetBelief, SingleTargetModel};
use ksme_core::oracle::random_case;
use ksme_core::rng::{substream, Purpose};
use ksme_core::{hungarian, mc_pseudo_moments, ospa, OspaParams};
use ksme_harness::{
    run_complexity_bench, run_scenario, validate_moments, BenchSettings, RunReport, ScenarioConfig, TrackerKind,
    ValidationSettings,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

const MOMENT_SIGMAS: f64 = 5.0;
const MOMENT_SAMPLES: usize = 1_000_000;
const MOMENT_CASES: usize = 20;
const MOMENT_BUDGET: Duration = Duration::from_secs(300);
const QUADRATURE_TOL: f64 = 1e-3;
const SYMMETRY_CASES: u64 = 100;
const SYMMETRY_REL_TOL: f64 = 1e-9;
const ASSIGNMENT_INSTANCES: u64 = 2000;
const ASSIGNMENT_MAX_N: usize = 6;
const ASSIGNMENT_BUDGET: Duration = Duration::from_secs(60);
const SLOPE_RANGE: (f64, f64) = (2.5, 3.5);
const SLOPE_COUNTS: [usize; 4] = [5, 10, 20, 40];
const SCENARIO_ALPHA: f64 = 0.05;
const ORACLE_RATIO: f64 = 3.0;
const PSD_FLOOR: f64 = -1e-9;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|p| p.into_inner())
}

fn verdict(name: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn eight_target_scenario() -> &'static RunReport {
    static REPORT: OnceLock<RunReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/eight_targets.toml");
        let cfg = ScenarioConfig::from_file(&path).unwrap();
        assert_eq!((cfg.targets, cfg.state_dim, cfg.runs, cfg.horizon), (8, 2, 30, 15));
        run_scenario(&cfg).unwrap()
    })
}

#[test]
fn moment_correctness() {
    let _g = serial();
    let clock = Instant::now();
    let settings =
        ValidationSettings { cases: MOMENT_CASES, samples: MOMENT_SAMPLES, sigmas: MOMENT_SIGMAS, seed: 0 };
    let report = validate_moments(&settings).unwrap();
    let elapsed = clock.elapsed();
    let entries: usize = report.rows.iter().map(|r| r.checked).sum();
    let failures: usize = report.rows.iter().map(|r| r.failures).sum();
    let worst = report.rows.iter().max_by(|a, b| a.worst_z.total_cmp(&b.worst_z)).unwrap();
    verdict(
        "moment correctness",
        report.passed() && report.rows.len() >= 20 && elapsed < MOMENT_BUDGET,
        &format!(
            "{} cases, {entries} entries, {failures} beyond {MOMENT_SIGMAS} SE, worst z {:.2} ({} {}), {:.1} s",
            report.rows.len(),
            worst.worst_z,
            worst.label,
            worst.worst_entry,
            elapsed.as_secs_f64()
        ),
    );
}

/// Trapezoid rule over ±12 predictive standard deviations around every target.
fn integrate_scalar_phd(case: &ksme_core::oracle::ValidationCase<f64>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for l in 0..case.prior.num_targets() {
        let t = case.bank.target(l);
        let mean = (t.h() * case.prior.target_mean(l))[0];
        let c = case.prior.cross_block(l, l);
        let var = (t.h() * c * t.h().transpose())[(0, 0)] + t.cv()[(0, 0)] + case.kernel.width()[(0, 0)];
        lo = lo.min(mean - 12.0 * var.sqrt());
        hi = hi.max(mean + 12.0 * var.sqrt());
    }
    let steps = 40_000;
    let h = (hi - lo) / steps as f64;
    let sum: f64 = (0..=steps)
        .map(|k| {
            let z = DVector::from_element(1, lo + k as f64 * h);
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            w * phd_convolved_with_kernel(&case.prior, &case.bank, &case.kernel, &z).unwrap()
        })
        .sum();
    sum * h
}

#[test]
fn convolved_phd_equals_pseudo_measurement_mean() {
    let _g = serial();
    let (mut entries, mut bitwise, mut mc_fail, mut worst_z, mut worst_quad, mut integrated) = (0, 0, 0, 0.0f64, 0.0f64, 0);
    for i in 0..12u64 {
        let case = random_case(77, i).unwrap();
        let closed = pseudo_moments(&case.prior, &case.bank, &case.kernel, &case.tests).unwrap();
        let mc = mc_pseudo_moments(&case.prior, &case.bank, &case.kernel, &case.tests, 200_000, 900 + i).unwrap();
        for (k, a) in case.tests.vectors().iter().enumerate() {
            entries += 1;
            let phd = phd_convolved_with_kernel(&case.prior, &case.bank, &case.kernel, a).unwrap();
            if phd.to_bits() != closed.mean_s[k].to_bits() {
                bitwise += 1;
            }
            let se = mc.standard_errors.mean_s[k];
            let diff = (phd - mc.moments.mean_s[k]).abs();
            if se > 0.0 {
                worst_z = worst_z.max(diff / se);
            }
            if diff > MOMENT_SIGMAS * se + 1e-12 * mc.moments.mean_s.amax() {
                mc_fail += 1;
            }
        }
        if case.kernel.dim() == 1 {
            integrated += 1;
            let n = case.prior.num_targets() as f64;
            worst_quad = worst_quad.max((integrate_scalar_phd(&case) - n).abs());
        }
    }
    verdict(
        "convolved PHD equals pseudo-measurement mean",
        bitwise == 0 && mc_fail == 0 && integrated > 0 && worst_quad < QUADRATURE_TOL,
        &format!(
            "{entries} test vectors, {bitwise} not bit-identical, {mc_fail} beyond {MOMENT_SIGMAS} SE (worst z {worst_z:.2}), \
             {integrated} scalar cases integrate to N within {worst_quad:.1e}"
        ),
    );
}

fn random_spd(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    (&g * g.transpose() + DMatrix::identity(dim, dim) * 0.2) * scale
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn posterior_is_symmetric_in_the_measurements() {
    let _g = serial();
    let mut worst = 0.0f64;
    for case in 0..SYMMETRY_CASES {
        let mut rng = substream(31, case, Purpose::Validation);
        let nt = rng.random_range(1..=5);
        let d = rng.random_range(1..=2);
        let n = d + rng.random_range(0..=1);
        let cv = random_spd(&mut rng, d, 0.1);
        let models = (0..nt)
            .map(|_| {
                let h = DMatrix::from_fn(d, n, |i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3));
                SingleTargetModel::new(h, cv.clone(), DMatrix::identity(n, n), random_spd(&mut rng, n, 0.05)).unwrap()
            })
            .collect();
        let bank = stack_models(models).unwrap();
        let mean = DVector::from_fn(nt * n, |_, _| rng.random_range(-2.0..2.0));
        let prior = MultiTargetBelief::new(mean, random_spd(&mut rng, nt * n, 0.3), nt).unwrap();
        let scan: Vec<DVector<f64>> = (0..nt).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.5..2.5))).collect();
        let meas = MeasurementSet::new(scan).unwrap();
        let kernel = KernelConfig::from_measurement_noise(&bank).unwrap();
        let post = measurement_update(&prior, &meas, &bank, &kernel).unwrap();
        let mut order: Vec<usize> = (0..nt).collect();
        order.shuffle(&mut rng);
        let other = measurement_update(&prior, &meas.reordered(&order).unwrap(), &bank, &kernel).unwrap();
        worst = worst
            .max(max_rel_diff(post.mean().as_slice(), other.mean().as_slice()))
            .max(max_rel_diff(post.cov().as_slice(), other.cov().as_slice()));
    }
    verdict(
        "posterior invariant to measurement order",
        worst <= SYMMETRY_REL_TOL,
        &format!("{SYMMETRY_CASES} cases, worst relative difference {worst:e}"),
    );
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 0..n {
        for rest in permutations(n - 1) {
            let mut p = vec![first];
            p.extend(rest.into_iter().map(|r| if r >= first { r + 1 } else { r }));
            out.push(p);
        }
    }
    out
}

fn row_order_sum(cost: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().fold(0.0, |acc, (r, &c)| acc + cost[(r, c)])
}

/// Lexicographically first permutation of minimum cost.
///
/// Totals within a few ulps of the minimum count as ties, since costs that
/// are equal in exact arithmetic can round apart.
fn brute_force(cost: &DMatrix<f64>, perms: &[Vec<usize>]) -> (Vec<usize>, f64) {
    let totals: Vec<f64> = perms.iter().map(|p| row_order_sum(cost, p)).collect();
    let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let band = 8.0 * cost.nrows() as f64 * f64::EPSILON * min.abs();
    let k = totals.iter().position(|t| *t <= min + band).unwrap();
    (perms[k].clone(), totals[k])
}

#[test]
fn assignment_and_ospa_match_enumeration() {
    let _g = serial();
    let clock = Instant::now();
    let all: Vec<Vec<Vec<usize>>> = (0..=ASSIGNMENT_MAX_N).map(permutations).collect();
    let (mut assign_bad, mut ospa_bad) = (0, 0);
    for k in 0..ASSIGNMENT_INSTANCES {
        let mut rng = substream(5, k, Purpose::Validation);
        let n = rng.random_range(1..=ASSIGNMENT_MAX_N);
        // every other instance uses small integer costs so ties are common
        let cost = if k % 2 == 0 {
            DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..10.0))
        } else {
            DMatrix::from_fn(n, n, |_, _| rng.random_range(0..4) as f64)
        };
        let (perm, best) = brute_force(&cost, &all[n]);
        let got = hungarian(&cost).unwrap();
        if got.total_cost != best || got.mapping != perm {
            assign_bad += 1;
        }

        let dim = rng.random_range(1..=3);
        let spread = if k % 3 == 0 { 6.0 } else { 1.5 };
        let a: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-spread..spread))).collect();
        let b: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-spread..spread))).collect();
        let params = OspaParams::new([1.0, 2.0, 3.0][k as usize % 3], [1.0, 2.5, 10.0][(k / 3) as usize % 3]).unwrap();
        let dist = DMatrix::from_fn(n, n, |i, j| (&a[i] - &b[j]).norm().min(params.cutoff).powf(params.order));
        assert_eq!(dist, ospa_cost_matrix(&a, &b, params));
        let (_, total) = brute_force(&dist, &all[n]);
        let expected = (total / n as f64).powf(1.0 / params.order);
        if ospa(&a, &b, params).unwrap() != expected {
            ospa_bad += 1;
        }
    }
    let elapsed = clock.elapsed();
    verdict(
        "assignment and OSPA match enumeration",
        assign_bad == 0 && ospa_bad == 0 && elapsed < ASSIGNMENT_BUDGET,
        &format!(
            "{ASSIGNMENT_INSTANCES} instances with N <= {ASSIGNMENT_MAX_N}, {assign_bad} assignment and {ospa_bad} OSPA mismatches, {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn update_time_is_cubic_in_target_count() {
    let _g = serial();
    let settings = BenchSettings { samples: 15, ..BenchSettings::default() };
    let report = run_complexity_bench(&ScenarioConfig::default(), &SLOPE_COUNTS, &settings).unwrap();
    let slope = report.slope.unwrap();
    let times: Vec<String> =
        report.rows.iter().map(|r| format!("N={} {:.3} ms", r.targets, r.median_seconds * 1e3)).collect();
    verdict(
        "update time cubic in target count",
        (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&slope),
        &format!("log-log slope {slope:.3} ({})", times.join(", ")),
    );
}

#[test]
fn eight_target_scenario_beats_prediction_and_tracks_oracle() {
    let _g = serial();
    let report = eight_target_scenario();
    let ksme = report.series(TrackerKind::KernelSme).unwrap();
    let predict_only = report.series(TrackerKind::PredictOnly).unwrap();
    let oracle = report.series(TrackerKind::OracleKf).unwrap();
    let complete = report.failures.is_empty() && ksme.rows.len() == 15 && ksme.rows.iter().all(|r| r.runs == 30);

    let last = ksme.rows.len() - 1;
    let diffs: Vec<f64> = predict_only.per_run.iter().zip(&ksme.per_run).map(|(p, k)| p[last] - k[last]).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    let p_value = 1.0 - StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t);
    let beats_prediction = p_value < SCENARIO_ALPHA;

    let ratios: Vec<f64> = ksme.rows.iter().zip(&oracle.rows).map(|(k, o)| k.mean_ospa / o.mean_ospa).collect();
    let over: Vec<usize> = ratios.iter().enumerate().filter(|(_, r)| **r > ORACLE_RATIO).map(|(k, _)| k + 1).collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);

    verdict(
        "eight-target scenario",
        complete && beats_prediction && over.is_empty(),
        &format!(
            "(a) step 15 mean OSPA {:.3} vs predict-only {:.3}, one-sided paired t = {t:.2}, p = {p_value:.2e}; \
             (b) worst ratio to oracle-KF {worst:.2}, above {ORACLE_RATIO} at steps {over:?}",
            ksme.rows[last].mean_ospa, predict_only.rows[last].mean_ospa
        ),
    );
}

#[test]
fn covariances_stay_positive_semidefinite() {
    let _g = serial();
    let report = eight_target_scenario();
    let worst = report.series.iter().map(|s| (s.tracker, s.worst_normalized_min_eigenvalue)).collect::<Vec<_>>();
    let pass = worst.iter().all(|(_, v)| *v >= PSD_FLOOR);
    let detail = worst.iter().map(|(t, v)| format!("{t} {v:.3e}")).collect::<Vec<_>>().join(", ");
    verdict("covariances positive semidefinite", pass, &format!("worst normalised min eigenvalue: {detail}"));
}
