//! Reference trackers: a Kalman filter that is told the true association,
//! and a global-nearest-neighbour Kalman filter.

use nalgebra::{DMatrix, DVector};

use crate::assignment::hungarian;
use crate::error::{precondition, Result};
use crate::linalg::{cholesky_jittered, GaussianDensity};
use crate::model::{LinearModelBank, MeasurementSet, MultiTargetBelief};
use crate::scalar::Scalar;

pub use crate::assignment::Assignment;

/// Joint Kalman update with measurements already in target order.
pub fn kalman_update_associated<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    target_ordered: &[DVector<T>],
    bank: &LinearModelBank<T>,
) -> Result<MultiTargetBelief<T>> {
    bank.check_belief(prior)?;
    if target_ordered.len() != bank.num_targets() || target_ordered.iter().any(|y| y.len() != bank.meas_dim()) {
        return Err(precondition(format!(
            "expected {} measurements of dimension {}",
            bank.num_targets(),
            bank.meas_dim()
        )));
    }
    let d = bank.meas_dim();
    let y = DVector::from_iterator(d * target_ordered.len(), target_ordered.iter().flat_map(|v| v.iter().copied()));
    let h = bank.stacked_h();
    let hc = h * prior.cov();
    let s = &hc * h.transpose() + bank.stacked_cv();
    let (chol, _) = cholesky_jittered(&s, "innovation covariance")?;
    let l = chol.l();
    let w = l.solve_lower_triangular(&hc).ok_or_else(|| precondition("degenerate innovation factor"))?;
    let u = l
        .solve_lower_triangular(&(y - h * prior.mean()))
        .ok_or_else(|| precondition("degenerate innovation factor"))?;
    let mean = prior.mean() + w.tr_mul(&u);
    let cov = prior.cov() - w.tr_mul(&w);
    Ok(MultiTargetBelief::from_parts(mean, cov, prior.num_targets()))
}

/// Kalman update using the simulator's recorded association.
pub fn oracle_kf_update<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    measurements: &MeasurementSet<T>,
    bank: &LinearModelBank<T>,
) -> Result<MultiTargetBelief<T>> {
    let ordered = measurements
        .in_target_order()
        .ok_or_else(|| precondition("oracle update needs the true association"))?;
    kalman_update_associated(prior, &ordered, bank)
}

/// Squared Mahalanobis distances `(y_j − H_l x̂_l)ᵀ S_l⁻¹ (y_j − H_l x̂_l)`
/// with `S_l = H_l C_ll H_lᵀ + Cv_l`; rows are targets, columns measurements.
pub fn gnn_cost_matrix<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    measurements: &[DVector<T>],
    bank: &LinearModelBank<T>,
) -> Result<DMatrix<T>> {
    bank.check_belief(prior)?;
    let nt = bank.num_targets();
    let mut cost = DMatrix::zeros(nt, measurements.len());
    for (l, model) in bank.targets().iter().enumerate() {
        let h = model.h();
        let mu = h * prior.target_mean(l);
        let s = h * prior.cross_block(l, l) * h.transpose() + model.cv();
        let dens = GaussianDensity::new(&s, "GNN innovation covariance")?;
        for (j, y) in measurements.iter().enumerate() {
            cost[(l, j)] = dens.whiten(&(y - &mu)).norm_squared();
        }
    }
    Ok(cost)
}

/// Global-nearest-neighbour update: optimal hard association by Mahalanobis
/// cost, then a Kalman update under it.
///
/// Measurements are sorted first, so the result does not depend on their
/// listed order, ties included.
pub fn gnn_update<T: Scalar>(
    prior: &MultiTargetBelief<T>,
    measurements: &MeasurementSet<T>,
    bank: &LinearModelBank<T>,
) -> Result<MultiTargetBelief<T>> {
    if measurements.len() != bank.num_targets() {
        return Err(precondition(format!(
            "expected exactly {} measurements, got {}",
            bank.num_targets(),
            measurements.len()
        )));
    }
    let ys: Vec<DVector<T>> =
        measurements.canonical_order().into_iter().map(|k| measurements.measurements()[k].clone()).collect();
    let assignment = hungarian(&gnn_cost_matrix(prior, &ys, bank)?)?;
    let ordered: Vec<DVector<T>> = assignment.mapping.iter().map(|&j| ys[j].clone()).collect();
    kalman_update_associated(prior, &ordered, bank)
}
