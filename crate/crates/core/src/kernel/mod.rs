//! The Kernel-SME measurement update.
//!
//! A scan `{y_1, …, y_N}` is mapped to the Gaussian mixture
//! `F(z) = Σ_l N(z; y_l, K)`. The mixture does not depend on the order of
//! the measurements, so evaluating it at a set of test vectors yields a
//! pseudo-measurement free of association uncertainty. The joint Gaussian
//! belief is then corrected with the linear MMSE update using closed-form
//! moments of that pseudo-measurement.

mod moments;
mod test_vectors;
mod update;

pub use moments::{phd_convolved_with_kernel, pseudo_moments, PseudoMeasurementMoments};
pub use test_vectors::{select_test_vectors, TestVectorSet, TestVectorSource};
pub use update::{filter_step, lmmse_update, measurement_update};

use nalgebra::{DMatrix, DVector};

use crate::error::{config, Result};
use crate::linalg::{check_pd, forward_substitute, principal_sqrt, GaussianDensity};
use crate::model::{LinearModelBank, MeasurementSet};
use crate::scalar::Scalar;

/// How the covariance of the pseudo-measurement treats products of kernels
/// that belong to two different targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairTerms {
    /// Integrates against the joint predictive density of both targets'
    /// measurements. Exact for any prior; pairs with a zero cross-covariance
    /// block reduce to a product of marginals and cost nothing extra.
    #[default]
    Exact,
    /// Treats different targets' measurements as independent. Keeps the
    /// update cubic in `N` for correlated priors but is only exact when the
    /// prior cross-covariances vanish.
    Independent,
}

/// Form of the same-target term `E[N(a_i; y_l, K) N(a_j; y_l, K)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SameComponentTerm {
    /// `N(a_i; a_j, 2K) · N((a_i + a_j)/2; H x̂_l, S_l + K/2)`, the Gaussian
    /// product identity.
    #[default]
    ProductIdentity,
    /// `N(a_i; a_j, K/2) · N((a_i + a_j)/2; H x̂_l, S_l)`. Biased; kept only
    /// to compare against the Monte Carlo oracle.
    NarrowUncorrected,
}

/// Kernel width `K` plus moment-evaluation options.
#[derive(Debug, Clone)]
pub struct KernelConfig<T: Scalar> {
    width: DMatrix<T>,
    density: GaussianDensity<T>,
    /// Principal square root of `d·K`; its columns are the test-vector offsets.
    offsets: DMatrix<T>,
    pub pair_terms: PairTerms,
    pub same_component: SameComponentTerm,
}

impl<T: Scalar> KernelConfig<T> {
    /// `width` must be symmetric positive definite.
    pub fn new(width: DMatrix<T>) -> Result<Self> {
        check_pd(&width, "kernel width K")?;
        let density = GaussianDensity::new(&width, "kernel width K")?;
        let offsets = principal_sqrt(&(&width * T::from_count(width.nrows())));
        Ok(Self { width, density, offsets, pair_terms: PairTerms::Exact, same_component: SameComponentTerm::ProductIdentity })
    }

    /// `K = Cv` of the first target.
    pub fn from_measurement_noise(bank: &LinearModelBank<T>) -> Result<Self> {
        Self::new(bank.target(0).cv().clone())
    }

    pub fn with_pair_terms(mut self, pair_terms: PairTerms) -> Self {
        self.pair_terms = pair_terms;
        self
    }

    pub fn with_same_component(mut self, term: SameComponentTerm) -> Self {
        self.same_component = term;
        self
    }

    pub fn width(&self) -> &DMatrix<T> {
        &self.width
    }

    pub fn dim(&self) -> usize {
        self.width.nrows()
    }

    pub(crate) fn density(&self) -> &GaussianDensity<T> {
        &self.density
    }

    pub(crate) fn offsets(&self) -> &DMatrix<T> {
        &self.offsets
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(config(format!("kernel width is {0}x{0} but measurements have dimension {d}", self.dim())));
        }
        Ok(())
    }
}

/// Evaluates `F(z) = Σ_l N(z; y_l, K)`.
///
/// The sum runs over the measurements in lexicographic order, so the result
/// is bit-identical for every ordering of the same set.
pub fn kernel_transform_eval<T: Scalar>(
    measurements: &MeasurementSet<T>,
    kernel: &KernelConfig<T>,
    z: &DVector<T>,
) -> Result<T> {
    kernel.check_dim(measurements.dim())?;
    kernel.check_dim(z.len())?;
    let ys = measurements.measurements();
    Ok(sum_kernels(kernel, measurements.canonical_order().iter().map(|&k| &ys[k]), z))
}

pub(crate) fn sum_kernels<'a, T: Scalar + 'a>(
    kernel: &KernelConfig<T>,
    ys: impl Iterator<Item = &'a DVector<T>>,
    z: &DVector<T>,
) -> T {
    let dens = kernel.density();
    let mut buf = vec![T::zero(); z.len()];
    ys.fold(T::zero(), |acc, y| {
        for (b, (zi, yi)) in buf.iter_mut().zip(z.iter().zip(y.iter())) {
            *b = *zi - *yi;
        }
        forward_substitute(dens.factor(), &mut buf);
        acc + dens.from_sq_distance(buf.iter().fold(T::zero(), |q, v| q + *v * *v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn set(points: &[[f64; 2]]) -> MeasurementSet<f64> {
        MeasurementSet::new(points.iter().map(|p| DVector::from_row_slice(p)).collect()).unwrap()
    }

    #[test]
    fn single_kernel_peak() {
        let k = KernelConfig::new(DMatrix::identity(2, 2)).unwrap();
        let v = kernel_transform_eval(&set(&[[0.0, 0.0]]), &k, &DVector::zeros(2)).unwrap();
        assert_relative_eq!(v, 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_relative_eq!(v, 0.1591549, epsilon = 1e-7);
    }

    #[test]
    fn coincident_kernels_add() {
        let k = KernelConfig::new(DMatrix::identity(2, 2)).unwrap();
        let v = kernel_transform_eval(&set(&[[0.0, 0.0], [0.0, 0.0]]), &k, &DVector::zeros(2)).unwrap();
        assert_relative_eq!(v, 2.0 / (2.0 * PI), epsilon = 1e-15);
        assert_relative_eq!(v, 0.3183099, epsilon = 1e-7);
    }

    #[test]
    fn order_does_not_change_a_single_bit() {
        let k = KernelConfig::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2])).unwrap();
        let a = set(&[[0.1, 0.7], [-1.3, 0.2], [0.4, 0.4], [2.0, -0.5]]);
        let z = DVector::from_vec(vec![0.25, 0.1]);
        let v = kernel_transform_eval(&a, &k, &z).unwrap();
        for order in [[3, 2, 1, 0], [1, 0, 3, 2], [2, 3, 0, 1]] {
            assert_eq!(kernel_transform_eval(&a.reordered(&order).unwrap(), &k, &z).unwrap(), v);
        }
    }

    #[test]
    fn rejects_bad_kernels() {
        assert!(KernelConfig::new(DMatrix::<f64>::zeros(2, 2)).is_err());
        let k = KernelConfig::new(DMatrix::<f64>::identity(1, 1)).unwrap();
        assert!(kernel_transform_eval(&set(&[[0.0, 0.0]]), &k, &DVector::zeros(2)).is_err());
    }
}
