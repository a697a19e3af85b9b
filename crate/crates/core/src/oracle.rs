//! Monte Carlo estimate of the pseudo-measurement moments.
//!
//! Draws `x ~ N(x̂, C)`, `v_l ~ N(0, Cv_l)`, forms `y_l = H_l x_l + v_l` and
//! evaluates the kernel transform at the test vectors. Moments are streamed
//! with Welford co-moment updates in 128 independent batches, one RNG
//! substream each; the batches are merged in index order, so the result only
//! depends on the seed. Standard errors are batch-means estimates.
//!
//! The oracle shares nothing with the closed-form path except the input
//! types and the Gaussian kernel evaluation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{precondition, Result};
use crate::kernel::{KernelConfig, PseudoMeasurementMoments, TestVectorSet};
use crate::linalg::{forward_substitute, psd_factor};
use crate::model::{LinearModelBank, MultiTargetBelief};
use crate::rng::{substream, Purpose};
use crate::scalar::Scalar;

/// Number of batches used for batch-means standard errors.
pub const ORACLE_BATCHES: usize = 128;

/// Smallest sample count accepted by [`mc_pseudo_moments`].
pub const MIN_ORACLE_SAMPLES: usize = 10_000;

/// Monte Carlo moments with matching-shape standard errors.
#[derive(Debug, Clone)]
pub struct OracleEstimate<T: Scalar> {
    pub moments: PseudoMeasurementMoments<T>,
    pub standard_errors: PseudoMeasurementMoments<T>,
    pub sample_count: usize,
}

#[derive(Clone)]
struct Accumulator<T: Scalar> {
    n: usize,
    mean_x: Vec<T>,
    mean_s: Vec<T>,
    /// Row-major `dx × ns`.
    co_xs: Vec<T>,
    /// Row-major upper triangle of `ns × ns` (lower part unused).
    co_ss: Vec<T>,
}

impl<T: Scalar> Accumulator<T> {
    fn new(nx: usize, ns: usize) -> Self {
        Self {
            n: 0,
            mean_x: vec![T::zero(); nx],
            mean_s: vec![T::zero(); ns],
            co_xs: vec![T::zero(); nx * ns],
            co_ss: vec![T::zero(); ns * ns],
        }
    }

    fn push(&mut self, x: &[T], s: &[T], dx: &mut [T], ds_old: &mut [T], ds_new: &mut [T]) {
        self.n += 1;
        let inv = T::one() / T::from_count(self.n);
        for (k, (m, v)) in self.mean_x.iter_mut().zip(x).enumerate() {
            dx[k] = *v - *m;
            *m += dx[k] * inv;
        }
        for (k, (m, v)) in self.mean_s.iter_mut().zip(s).enumerate() {
            ds_old[k] = *v - *m;
            *m += ds_old[k] * inv;
            ds_new[k] = *v - *m;
        }
        let ns = s.len();
        for (i, dxi) in dx.iter().enumerate() {
            let row = &mut self.co_xs[i * ns..(i + 1) * ns];
            for (c, dsj) in row.iter_mut().zip(ds_new.iter()) {
                *c += *dxi * *dsj;
            }
        }
        for j in 0..ns {
            let a = ds_old[j];
            let row = &mut self.co_ss[j * ns..(j + 1) * ns];
            for k in j..ns {
                row[k] += a * ds_new[k];
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (T::from_count(self.n), T::from_count(other.n));
        let n = na + nb;
        let w = na * nb / n;
        let dx: Vec<T> = other.mean_x.iter().zip(&self.mean_x).map(|(b, a)| *b - *a).collect();
        let ds: Vec<T> = other.mean_s.iter().zip(&self.mean_s).map(|(b, a)| *b - *a).collect();
        let ns = ds.len();
        for (i, dxi) in dx.iter().enumerate() {
            for j in 0..ns {
                self.co_xs[i * ns + j] += other.co_xs[i * ns + j] + *dxi * ds[j] * w;
            }
        }
        for j in 0..ns {
            for k in j..ns {
                self.co_ss[j * ns + k] += other.co_ss[j * ns + k] + ds[j] * ds[k] * w;
            }
        }
        for (m, d) in self.mean_x.iter_mut().zip(&dx) {
            *m += *d * nb / n;
        }
        for (m, d) in self.mean_s.iter_mut().zip(&ds) {
            *m += *d * nb / n;
        }
        self.n += other.n;
    }

    fn moments(&self) -> PseudoMeasurementMoments<T> {
        let nx = self.mean_x.len();
        let ns = self.mean_s.len();
        let denom = T::from_count(self.n.saturating_sub(1).max(1));
        let cross_cov = DMatrix::from_fn(nx, ns, |i, j| self.co_xs[i * ns + j] / denom);
        let cov_ss = DMatrix::from_fn(ns, ns, |j, k| {
            let (a, b) = if j <= k { (j, k) } else { (k, j) };
            self.co_ss[a * ns + b] / denom
        });
        PseudoMeasurementMoments { mean_s: DVector::from_row_slice(&self.mean_s), cross_cov, cov_ss }
    }
}

struct Sampler<'a, T: Scalar> {
    prior: &'a MultiTargetBelief<T>,
    bank: &'a LinearModelBank<T>,
    state_factor: DMatrix<T>,
    kernel_factor: &'a DMatrix<T>,
    kernel_log_norm: T,
    white_tests: Vec<T>,
}

impl<T: Scalar> Sampler<'_, T> {
    fn run_batch(&self, batch: usize, samples: usize, seed: u64) -> Accumulator<T> {
        let nx = self.prior.mean().len();
        let d = self.bank.meas_dim();
        let n = self.bank.state_dim();
        let ns = self.white_tests.len() / d;
        let mut rng = substream(seed, batch as u64, Purpose::Oracle);
        let mut acc = Accumulator::new(nx, ns);
        let mut z = DVector::<T>::zeros(nx);
        let mut x = DVector::<T>::zeros(nx);
        let mut white_y = vec![T::zero(); d * self.bank.num_targets()];
        let mut s = vec![T::zero(); ns];
        let (mut dx, mut ds_old, mut ds_new) = (vec![T::zero(); nx], vec![T::zero(); ns], vec![T::zero(); ns]);
        let half = T::lit(0.5);
        for _ in 0..samples {
            for v in z.iter_mut() {
                *v = T::lit(rng.sample::<f64, _>(StandardNormal));
            }
            x.copy_from(self.prior.mean());
            x.gemv(T::one(), &self.state_factor, &z, T::one());
            for (l, model) in self.bank.targets().iter().enumerate() {
                let noise = DVector::from_fn(d, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
                let y = model.h() * x.rows(l * n, n) + model.cv_factor() * noise;
                let slot = &mut white_y[l * d..(l + 1) * d];
                slot.copy_from_slice(y.as_slice());
                forward_substitute(self.kernel_factor, slot);
            }
            for (i, si) in s.iter_mut().enumerate() {
                let a = &self.white_tests[i * d..(i + 1) * d];
                *si = white_y.chunks_exact(d).fold(T::zero(), |acc, yl| {
                    let q = a.iter().zip(yl).fold(T::zero(), |q, (p, r)| q + (*p - *r) * (*p - *r));
                    acc + (self.kernel_log_norm - half * q).exp()
                });
            }
            acc.push(x.as_slice(), &s, &mut dx, &mut ds_old, &mut ds_new);
        }
        acc
    }
}

/// Estimates `ŝ`, `C^{xs}` and `C^{ss}` by sampling. Requires at least
/// [`MIN_ORACLE_SAMPLES`] samples.
pub fn mc_pseudo_moments<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    bank: &LinearModelBank<T>,
    kernel: &KernelConfig<T>,
    tests: &TestVectorSet<T>,
    samples: usize,
    seed: u64,
) -> Result<OracleEstimate<T>> {
    if samples < MIN_ORACLE_SAMPLES {
        return Err(precondition(format!("oracle needs at least {MIN_ORACLE_SAMPLES} samples, got {samples}")));
    }
    bank.check_belief(prior)?;
    let d = bank.meas_dim();
    kernel.check_dim(d)?;
    if tests.vectors().iter().any(|a| a.len() != d) {
        return Err(precondition(format!("test vectors must have dimension {d}")));
    }
    let kernel_factor = kernel.density().factor();
    let mut white_tests = Vec::with_capacity(d * tests.len());
    for a in tests.vectors() {
        let start = white_tests.len();
        white_tests.extend(a.iter().copied());
        forward_substitute(kernel_factor, &mut white_tests[start..]);
    }
    let sampler = Sampler {
        prior,
        bank,
        state_factor: psd_factor(prior.cov()),
        kernel_factor,
        kernel_log_norm: kernel.density().log_norm(),
        white_tests,
    };

    let base = samples / ORACLE_BATCHES;
    let extra = samples % ORACLE_BATCHES;
    let batches: Vec<Accumulator<T>> = (0..ORACLE_BATCHES)
        .into_par_iter()
        .map(|b| sampler.run_batch(b, base + usize::from(b < extra), seed))
        .collect();

    let mut total = Accumulator::new(prior.mean().len(), tests.len());
    for b in &batches {
        total.merge(b);
    }
    let per_batch: Vec<_> = batches.iter().map(Accumulator::moments).collect();
    Ok(OracleEstimate { moments: total.moments(), standard_errors: batch_standard_errors(&per_batch), sample_count: samples })
}

fn batch_standard_errors<T: Scalar>(batches: &[PseudoMeasurementMoments<T>]) -> PseudoMeasurementMoments<T> {
    let b = T::from_count(batches.len());
    let se = |get: &dyn Fn(&PseudoMeasurementMoments<T>) -> T| {
        let mean = batches.iter().fold(T::zero(), |acc, m| acc + get(m)) / b;
        let var = batches.iter().fold(T::zero(), |acc, m| {
            let d = get(m) - mean;
            acc + d * d
        }) / (b - T::one());
        (var / b).sqrt()
    };
    let first = &batches[0];
    PseudoMeasurementMoments {
        mean_s: DVector::from_fn(first.mean_s.len(), |i, _| se(&|m| m.mean_s[i])),
        cross_cov: DMatrix::from_fn(first.cross_cov.nrows(), first.cross_cov.ncols(), |i, j| se(&|m| m.cross_cov[(i, j)])),
        cov_ss: DMatrix::from_fn(first.cov_ss.nrows(), first.cov_ss.ncols(), |i, j| se(&|m| m.cov_ss[(i, j)])),
    }
}

/// Entry-wise comparison of closed-form moments with an oracle estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub checked: usize,
    pub failures: usize,
    /// Largest `|closed − mc| / SE`.
    pub worst_z: f64,
    /// Name and index of the entry with the largest z-score.
    pub worst_entry: String,
}

impl Agreement {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Counts entries with `|closed − mc| > sigmas·SE + floor`, where `floor` is
/// `1e-12` times the largest oracle magnitude of that moment. The floor only
/// matters for entries whose Monte Carlo spread is exactly zero.
pub fn agreement<T: Scalar>(
    closed: &PseudoMeasurementMoments<T>,
    oracle: &OracleEstimate<T>,
    sigmas: f64,
) -> Agreement {
    let mut out = Agreement { checked: 0, failures: 0, worst_z: 0.0, worst_entry: String::new() };
    let mut check = |name: &str, c: &[T], m: &[T], se: &[T], rows: usize| {
        let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.to_f64_lossless().abs()));
        let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
        for (k, ((c, m), se)) in c.iter().zip(m).zip(se).enumerate() {
            let diff = (c.to_f64_lossless() - m.to_f64_lossless()).abs();
            let se = se.to_f64_lossless();
            out.checked += 1;
            if !(diff <= sigmas * se + floor) {
                out.failures += 1;
            }
            let z = if se > 0.0 { diff / se } else if diff <= floor { 0.0 } else { f64::INFINITY };
            if z > out.worst_z || out.worst_entry.is_empty() {
                out.worst_z = z;
                out.worst_entry = format!("{name}[{},{}]", k % rows, k / rows);
            }
        }
    };
    check("mean_s", closed.mean_s.as_slice(), oracle.moments.mean_s.as_slice(), oracle.standard_errors.mean_s.as_slice(), closed.mean_s.len());
    check(
        "cross_cov",
        closed.cross_cov.as_slice(),
        oracle.moments.cross_cov.as_slice(),
        oracle.standard_errors.cross_cov.as_slice(),
        closed.cross_cov.nrows(),
    );
    check(
        "cov_ss",
        closed.cov_ss.as_slice(),
        oracle.moments.cov_ss.as_slice(),
        oracle.standard_errors.cov_ss.as_slice(),
        closed.cov_ss.nrows(),
    );
    out
}

/// A randomised moment-validation problem.
#[derive(Debug, Clone)]
pub struct ValidationCase<T: Scalar> {
    pub prior: MultiTargetBelief<T>,
    pub bank: LinearModelBank<T>,
    pub kernel: KernelConfig<T>,
    pub tests: TestVectorSet<T>,
    pub label: String,
}

/// Builds validation case `index` under `seed`.
///
/// `(N, d)` cycles through `{1,2,3} × {1,2}`; the state dimension is `d` or
/// `d + 1`. Measurement matrices, noises, kernel width and a fully
/// correlated prior covariance are random; the test vectors are placed
/// around one scan drawn from the prior predictive.
pub fn random_case(seed: u64, index: u64) -> Result<ValidationCase<f64>> {
    use crate::kernel::select_test_vectors;
    use crate::model::{stack_models, MeasurementSet, SingleTargetModel};

    let mut rng = substream(seed, index, Purpose::Validation);
    let nt = 1 + (index % 3) as usize;
    let d = 1 + ((index / 3) % 2) as usize;
    let n = d + rng.random_range(0..=1usize);
    let mut normal = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);

    let mut models = Vec::with_capacity(nt);
    for _ in 0..nt {
        let h = DMatrix::from_fn(d, n, |i, j| if i == j { 1.0 } else { 0.0 } + normal(0.3));
        let g = DMatrix::from_fn(d, d, |_, _| normal(0.3));
        let cv = &g * g.transpose() + DMatrix::identity(d, d) * 0.05;
        let cw = DMatrix::identity(n, n) * 0.1;
        models.push(SingleTargetModel::new(h, cv, DMatrix::identity(n, n), cw)?);
    }
    let bank = stack_models(models)?;

    let dim = nt * n;
    let mean = DVector::from_fn(dim, |_, _| normal(1.0));
    let b = DMatrix::from_fn(dim, dim, |_, _| normal(0.35));
    let cov = &b * b.transpose() + DMatrix::identity(dim, dim) * 0.02;
    let prior = MultiTargetBelief::new(mean, cov, nt)?;

    let g = DMatrix::from_fn(d, d, |_, _| normal(0.2));
    let kernel = KernelConfig::new(&g * g.transpose() + DMatrix::identity(d, d) * (0.05 + 0.1 * normal(1.0).abs()))?;

    let factor = psd_factor(prior.cov());
    let z = DVector::from_fn(dim, |_, _| normal(1.0));
    let x = prior.mean() + factor * z;
    let ys: Vec<DVector<f64>> = bank
        .targets()
        .iter()
        .enumerate()
        .map(|(l, m)| m.h() * x.rows(l * n, n) + m.cv_factor() * DVector::from_fn(d, |_, _| normal(1.0)))
        .collect();
    let scan = MeasurementSet::new(ys)?;
    let tests = select_test_vectors(&scan.reordered(&scan.canonical_order())?, &kernel)?;
    Ok(ValidationCase { prior, bank, kernel, tests, label: format!("case {index}: N={nt} d={d} n={n}") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::pseudo_moments;
    use crate::model::{stack_models, SingleTargetModel};

    fn scalar_case() -> (MultiTargetBelief<f64>, LinearModelBank<f64>, KernelConfig<f64>) {
        let m = |v| DMatrix::from_element(1, 1, v);
        let bank = stack_models(vec![SingleTargetModel::new(m(1.0), m(0.1), m(1.0), m(0.0)).unwrap()]).unwrap();
        let prior = MultiTargetBelief::new(DVector::zeros(1), m(1.0), 1).unwrap();
        (prior, bank, KernelConfig::new(m(0.1)).unwrap())
    }

    #[test]
    fn scalar_mean_converges_to_density() {
        let (prior, bank, kernel) = scalar_case();
        let tests = TestVectorSet::from_vectors(vec![DVector::zeros(1)]);
        let est = mc_pseudo_moments(&prior, &bank, &kernel, &tests, 1_000_000, 17).unwrap();
        let exact = 1.0 / (2.0 * std::f64::consts::PI * 1.2).sqrt();
        let se = est.standard_errors.mean_s[0];
        assert!(se > 0.0);
        assert!((est.moments.mean_s[0] - exact).abs() <= 5.0 * se, "{} vs {exact} (se {se})", est.moments.mean_s[0]);
        let closed = pseudo_moments(&prior, &bank, &kernel, &tests).unwrap();
        assert!(agreement(&closed, &est, 5.0).passed());
    }

    #[test]
    fn degenerate_distribution_has_zero_covariance() {
        let bank = LinearModelBank::homogeneous(SingleTargetModel::random_walk(2, 0.0, 0.0).unwrap(), 2).unwrap();
        let prior = MultiTargetBelief::new(DVector::from_vec(vec![0.0, 0.5, 1.0, -0.5]), DMatrix::zeros(4, 4), 2).unwrap();
        let kernel = KernelConfig::new(DMatrix::identity(2, 2) * 0.1).unwrap();
        let tests = TestVectorSet::from_vectors(vec![DVector::zeros(2), DVector::from_element(2, 0.4)]);
        let est = mc_pseudo_moments(&prior, &bank, &kernel, &tests, MIN_ORACLE_SAMPLES, 3).unwrap();
        assert!(est.moments.cov_ss.iter().all(|v| *v == 0.0));
        assert!(est.moments.cross_cov.iter().all(|v| *v == 0.0));
        assert!(est.standard_errors.cov_ss.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn same_seed_same_estimate() {
        let (prior, bank, kernel) = scalar_case();
        let tests = TestVectorSet::from_vectors(vec![DVector::from_element(1, 0.2)]);
        let a = mc_pseudo_moments(&prior, &bank, &kernel, &tests, 20_000, 5).unwrap();
        let b = mc_pseudo_moments(&prior, &bank, &kernel, &tests, 20_000, 5).unwrap();
        assert_eq!(a.moments, b.moments);
        assert_eq!(a.standard_errors, b.standard_errors);
    }

    #[test]
    fn too_few_samples_is_rejected() {
        let (prior, bank, kernel) = scalar_case();
        let tests = TestVectorSet::from_vectors(vec![DVector::zeros(1)]);
        assert!(mc_pseudo_moments(&prior, &bank, &kernel, &tests, 100, 0).is_err());
    }

    #[test]
    fn merge_matches_single_stream() {
        let xs: Vec<[f64; 2]> = (0..50).map(|k| [(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()]).collect();
        let ss: Vec<[f64; 2]> = (0..50).map(|k| [(k as f64 * 0.7).cos(), k as f64 * 0.01]).collect();
        let mut scratch = (vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]);
        let mut whole = Accumulator::new(2, 2);
        let (mut a, mut b) = (Accumulator::new(2, 2), Accumulator::new(2, 2));
        for (k, (x, s)) in xs.iter().zip(&ss).enumerate() {
            whole.push(x, s, &mut scratch.0, &mut scratch.1, &mut scratch.2);
            let part = if k < 20 { &mut a } else { &mut b };
            part.push(x, s, &mut scratch.0, &mut scratch.1, &mut scratch.2);
        }
        a.merge(&b);
        let (m1, m2) = (whole.moments(), a.moments());
        assert!((m1.cov_ss - m2.cov_ss).amax() < 1e-14);
        assert!((m1.cross_cov - m2.cross_cov).amax() < 1e-14);
    }
}
