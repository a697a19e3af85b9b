use nalgebra::DVector;

use crate::error::{precondition, Result};
use crate::kernel::{pseudo_moments, select_test_vectors, sum_kernels, KernelConfig, PseudoMeasurementMoments};
use crate::linalg::cholesky_jittered;
use crate::model::{predict, LinearModelBank, MeasurementSet, MultiTargetBelief};
use crate::scalar::Scalar;

/// Linear MMSE correction of `prior` with an observed pseudo-measurement:
///
/// `x̂ ← x̂ + C^{xs} (C^{ss})⁻¹ (s − ŝ)`, `C ← C − C^{xs} (C^{ss})⁻¹ C^{sx}`.
///
/// `C^{ss}` is factorised with [`cholesky_jittered`]; the posterior
/// covariance is symmetrised.
pub fn lmmse_update<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    moments: &PseudoMeasurementMoments<T>,
    pseudo: &DVector<T>,
) -> Result<MultiTargetBelief<T>> {
    let na = moments.mean_s.len();
    if pseudo.len() != na || moments.cov_ss.shape() != (na, na) || moments.cross_cov.shape() != (prior.mean().len(), na)
    {
        return Err(precondition("pseudo-measurement moments do not match the prior or the observation"));
    }
    let (chol, _) = cholesky_jittered(&moments.cov_ss, "pseudo-measurement covariance")?;
    let l = chol.l();
    // whitened gain: C^{xs} (C^{ss})⁻¹ C^{sx} = Wᵀ W with W = L⁻¹ C^{sx}
    let w = l
        .solve_lower_triangular(&moments.cross_cov.transpose())
        .ok_or_else(|| precondition("degenerate pseudo-measurement covariance factor"))?;
    let innovation = l
        .solve_lower_triangular(&(pseudo - &moments.mean_s))
        .ok_or_else(|| precondition("degenerate pseudo-measurement covariance factor"))?;
    let mean = prior.mean() + w.tr_mul(&innovation);
    let cov = prior.cov() - w.tr_mul(&w);
    Ok(MultiTargetBelief::from_parts(mean, cov, prior.num_targets()))
}

/// Kernel-SME measurement update of a predicted belief with one scan.
///
/// The scan is first put into lexicographic order, so the posterior does not
/// depend on how the caller listed the measurements.
pub fn measurement_update<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    measurements: &MeasurementSet<T>,
    bank: &LinearModelBank<T>,
    kernel: &KernelConfig<T>,
) -> Result<MultiTargetBelief<T>> {
    if measurements.len() != bank.num_targets() {
        return Err(precondition(format!(
            "expected exactly {} measurements, got {}",
            bank.num_targets(),
            measurements.len()
        )));
    }
    if measurements.dim() != bank.meas_dim() {
        return Err(precondition(format!(
            "measurements have dimension {}, model expects {}",
            measurements.dim(),
            bank.meas_dim()
        )));
    }
    let ordered = measurements.reordered(&measurements.canonical_order())?;
    update_as_listed(prior, &ordered, bank, kernel)
}

pub(crate) fn update_as_listed<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    measurements: &MeasurementSet<T>,
    bank: &LinearModelBank<T>,
    kernel: &KernelConfig<T>,
) -> Result<MultiTargetBelief<T>> {
    let tests = select_test_vectors(measurements, kernel)?;
    let pseudo = DVector::from_iterator(
        tests.len(),
        tests.vectors().iter().map(|a| sum_kernels(kernel, measurements.measurements().iter(), a)),
    );
    let moments = pseudo_moments(prior, bank, kernel, &tests)?;
    lmmse_update(prior, &moments, &pseudo)
}

/// Time update followed by the Kernel-SME measurement update.
pub fn filter_step<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    measurements: &MeasurementSet<T>,
    bank: &LinearModelBank<T>,
    kernel: &KernelConfig<T>,
) -> Result<MultiTargetBelief<T>> {
    measurement_update(&predict(prior, bank)?, measurements, bank, kernel)
}
