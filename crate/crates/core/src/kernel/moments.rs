//! Closed-form first and second moments of the pseudo-measurement
//! `s_i = F(a_i)` under the predictive distribution of the measurements.
//!
//! With `μ_l = H_l x̂_l`, `S_l = H_l C_ll H_lᵀ + Cv_l` and
//! `P_il = N(a_i; μ_l, S_l + K)`:
//!
//! ```text
//! ŝ_i      = Σ_l P_il
//! C^{x s_i} = Σ_l P_il · C_{:,l} H_lᵀ (S_l + K)⁻¹ (a_i − μ_l)
//! C^{s_i s_j} = Σ_l [ N(a_i; a_j, 2K) · N((a_i + a_j)/2; μ_l, S_l + K/2) − P_il P_jl ]
//!            + Σ_{l≠m} [ N([a_i; a_j]; [μ_l; μ_m], J_lm) − P_il P_jm ]
//! ```
//!
//! where `J_lm` is the joint covariance of `(y_l, y_m)` plus `K` on both
//! diagonal blocks. The second sum vanishes when the prior cross-covariance
//! of targets `l` and `m` is zero, which is how the update stays cubic in `N`
//! for block-diagonal priors.

use nalgebra::{DMatrix, DVector};

use crate::error::{precondition, Result};
use crate::kernel::{KernelConfig, PairTerms, SameComponentTerm, TestVectorSet};
use crate::linalg::{backward_substitute_transposed, forward_substitute, GaussianDensity};
use crate::model::{LinearModelBank, MultiTargetBelief};
use crate::scalar::Scalar;

/// Predicted mean and covariances of the pseudo-measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMeasurementMoments<T: Scalar> {
    /// `ŝ`, one entry per test vector.
    pub mean_s: DVector<T>,
    /// `C^{xs}`, (N·n) × N_a.
    pub cross_cov: DMatrix<T>,
    /// `C^{ss}`, N_a × N_a.
    pub cov_ss: DMatrix<T>,
}

/// Predictive density of one target's measurement, widened by the kernel.
struct PredictedComponent<T: Scalar> {
    mean: DVector<T>,
    innovation: DMatrix<T>,
    with_kernel: GaussianDensity<T>,
}

impl<T: Scalar> PredictedComponent<T> {
    /// `N(a; μ, S + K)`; leaves the whitened residual `L⁻¹(a − μ)` in `buf`.
    #[inline]
    fn density_at(&self, a: &DVector<T>, buf: &mut [T]) -> T {
        for (b, (x, m)) in buf.iter_mut().zip(a.iter().zip(self.mean.iter())) {
            *b = *x - *m;
        }
        forward_substitute(self.with_kernel.factor(), buf);
        self.with_kernel.from_sq_distance(buf.iter().fold(T::zero(), |q, v| q + *v * *v))
    }
}

fn predicted_components<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    bank: &LinearModelBank<T>,
    kernel: &KernelConfig<T>,
) -> Result<Vec<PredictedComponent<T>>> {
    bank.check_belief(prior)?;
    kernel.check_dim(bank.meas_dim())?;
    bank.targets()
        .iter()
        .enumerate()
        .map(|(l, model)| {
            let h = model.h();
            let mean = h * prior.target_mean(l);
            let innovation = h * prior.cross_block(l, l) * h.transpose() + model.cv();
            let with_kernel = GaussianDensity::new(&(&innovation + kernel.width()), "predicted measurement + kernel")?;
            Ok(PredictedComponent { mean, innovation, with_kernel })
        })
        .collect()
}

/// `Σ_l N(z; H_l x̂_l, H_l C_ll H_lᵀ + Cv_l + K)`: the predicted measurement
/// PHD convolved with the kernel, i.e. `E[F(z)]`.
pub fn phd_convolved_with_kernel<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    bank: &LinearModelBank<T>,
    kernel: &KernelConfig<T>,
    z: &DVector<T>,
) -> Result<T> {
    kernel.check_dim(z.len())?;
    let comps = predicted_components(prior, bank, kernel)?;
    let mut buf = vec![T::zero(); z.len()];
    Ok(comps.iter().fold(T::zero(), |acc, c| acc + c.density_at(z, &mut buf)))
}

fn whiten_all<T: Scalar>(factor: &DMatrix<T>, vectors: &[DVector<T>], offset: Option<&DVector<T>>) -> Vec<T> {
    let d = factor.nrows();
    let mut out = vec![T::zero(); d * vectors.len()];
    for (a, slot) in vectors.iter().zip(out.chunks_exact_mut(d)) {
        slot.copy_from_slice(a.as_slice());
        if let Some(mu) = offset {
            for (v, m) in slot.iter_mut().zip(mu.as_slice()) {
                *v -= *m;
            }
        }
        forward_substitute(factor, slot);
    }
    out
}

#[inline]
fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| {
        let d = *x - *y;
        acc + d * d
    })
}

/// Closed-form moments of the pseudo-measurement at `tests`.
pub fn pseudo_moments<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    bank: &LinearModelBank<T>,
    kernel: &KernelConfig<T>,
    tests: &TestVectorSet<T>,
) -> Result<PseudoMeasurementMoments<T>> {
    let comps = predicted_components(prior, bank, kernel)?;
    let a = tests.vectors();
    let d = bank.meas_dim();
    if a.iter().any(|v| v.len() != d) {
        return Err(precondition(format!("test vectors must have dimension {d}")));
    }
    let na = a.len();
    let nt = comps.len();

    let mut p = DMatrix::zeros(na, nt);
    let mut cross_cov = DMatrix::zeros(prior.mean().len(), na);
    let mut buf = vec![T::zero(); d];
    for (l, c) in comps.iter().enumerate() {
        let left = prior.target_columns(l) * bank.target(l).h().transpose();
        let mut weighted = DMatrix::zeros(d, na);
        for (i, ai) in a.iter().enumerate() {
            let pil = c.density_at(ai, &mut buf);
            p[(i, l)] = pil;
            backward_substitute_transposed(c.with_kernel.factor(), &mut buf);
            for (k, v) in buf.iter().enumerate() {
                weighted[(k, i)] = *v * pil;
            }
        }
        cross_cov.gemm(T::one(), &left, &weighted, T::one());
    }
    let mean_s = DVector::from_fn(na, |i, _| (0..nt).fold(T::zero(), |acc, l| acc + p[(i, l)]));

    let cov_ss = pseudo_covariance(prior, bank, kernel, a, &comps, &p)?;
    Ok(PseudoMeasurementMoments { mean_s, cross_cov, cov_ss })
}

fn pseudo_covariance<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    bank: &LinearModelBank<T>,
    kernel: &KernelConfig<T>,
    a: &[DVector<T>],
    comps: &[PredictedComponent<T>],
    p: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let na = a.len();
    let nt = comps.len();
    let d = kernel.dim();
    let half = T::lit(0.5);

    let (pair_width, same_extra) = match kernel.same_component {
        SameComponentTerm::ProductIdentity => (kernel.width() * T::lit(2.0), Some(kernel.width() * half)),
        SameComponentTerm::NarrowUncorrected => (kernel.width() * half, None),
    };
    let pair = GaussianDensity::new(&pair_width, "kernel pair width")?;
    let pair_white = whiten_all(pair.factor(), a, None);

    let mut mids = Vec::with_capacity(nt);
    let mut mid_white = Vec::with_capacity(nt);
    for c in comps {
        let cov = match &same_extra {
            Some(extra) => &c.innovation + extra,
            None => c.innovation.clone(),
        };
        let dens = GaussianDensity::new(&cov, "same-target pseudo-measurement term")?;
        mid_white.push(whiten_all(dens.factor(), a, Some(&c.mean)));
        mids.push(dens);
    }

    // Row i is accumulated over j ≥ i with l in the middle loop so the inner
    // loop walks contiguous memory; each entry still sums l in ascending order.
    let mut cov = DMatrix::zeros(na, na);
    let mut e = vec![T::zero(); na];
    let mut acc = vec![T::zero(); na];
    for i in 0..na {
        let wi = &pair_white[i * d..(i + 1) * d];
        for j in i..na {
            e[j] = pair.from_sq_distance(sq_dist(wi, &pair_white[j * d..(j + 1) * d]));
            acc[j] = T::zero();
        }
        for l in 0..nt {
            let w = &mid_white[l];
            let pl = p.column(l);
            let pil = pl[i];
            for j in i..na {
                let mut same = T::zero();
                if e[j] > T::zero() {
                    let q = (0..d).fold(T::zero(), |q, k| {
                        let v = (w[i * d + k] + w[j * d + k]) * half;
                        q + v * v
                    });
                    same = e[j] * mids[l].from_sq_distance(q);
                }
                acc[j] += same - pil * pl[j];
            }
        }
        for j in i..na {
            cov[(i, j)] = acc[j];
            cov[(j, i)] = acc[j];
        }
    }

    if kernel.pair_terms == PairTerms::Exact && nt > 1 {
        add_correlated_pairs(prior, bank, kernel, a, comps, p, &mut cov)?;
    }
    Ok(cov)
}

/// Adds `Σ_{l≠m} (E[N(a_i; y_l, K) N(a_j; y_m, K)] − P_il P_jm)` for every
/// target pair whose measurements are correlated under the prior.
fn add_correlated_pairs<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    bank: &LinearModelBank<T>,
    kernel: &KernelConfig<T>,
    a: &[DVector<T>],
    comps: &[PredictedComponent<T>],
    p: &DMatrix<T>,
    cov: &mut DMatrix<T>,
) -> Result<()> {
    let na = a.len();
    let nt = comps.len();
    let d = kernel.dim();
    // t[(i, j)] accumulates the ordered pairs l < m; the m > l half is its transpose
    let mut t = DMatrix::<T>::zeros(na, na);
    let mut touched = false;
    for l in 0..nt {
        for m in (l + 1)..nt {
            let block = prior.cross_block(l, m);
            if block.iter().all(|v| v.is_zero()) {
                continue;
            }
            let x = bank.target(l).h() * block * bank.target(m).h().transpose();
            if x.iter().all(|v| v.is_zero()) {
                continue;
            }
            touched = true;
            let mut joint = DMatrix::zeros(2 * d, 2 * d);
            joint.view_mut((0, 0), (d, d)).copy_from(&(&comps[l].innovation + kernel.width()));
            joint.view_mut((d, d), (d, d)).copy_from(&(&comps[m].innovation + kernel.width()));
            joint.view_mut((0, d), (d, d)).copy_from(&x);
            joint.view_mut((d, 0), (d, d)).copy_from(&x.transpose());
            let dens = GaussianDensity::new(&joint, "correlated target pair")?;
            let f = dens.factor();
            let l11 = f.view((0, 0), (d, d)).into_owned();
            let l21 = f.view((d, 0), (d, d)).into_owned();
            let l22 = f.view((d, d), (d, d)).into_owned();

            let z1 = whiten_all(&l11, a, Some(&comps[l].mean));
            let pj = whiten_all(&l22, a, Some(&comps[m].mean));
            let mut shift = Vec::with_capacity(na * d);
            for i in 0..na {
                let start = shift.len();
                let z = DVector::from_row_slice(&z1[i * d..(i + 1) * d]);
                shift.extend((&l21 * z).iter().copied());
                forward_substitute(&l22, &mut shift[start..]);
            }

            for i in 0..na {
                let zi = &z1[i * d..(i + 1) * d];
                let qi = zi.iter().fold(T::zero(), |q, v| q + *v * *v);
                let ri = &shift[i * d..(i + 1) * d];
                for j in 0..na {
                    let q = qi + sq_dist(&pj[j * d..(j + 1) * d], ri);
                    t[(i, j)] += dens.from_sq_distance(q) - p[(i, l)] * p[(j, m)];
                }
            }
        }
    }
    if touched {
        for i in 0..na {
            for j in i..na {
                let v = t[(i, j)] + t[(j, i)];
                cov[(i, j)] += v;
                if i != j {
                    cov[(j, i)] += v;
                }
            }
        }
    }
    Ok(())
}
