//! OSPA distance and labelled RMSE.

use nalgebra::{DMatrix, DVector};

use crate::assignment::hungarian;
use crate::error::{config, precondition, Result};
use crate::model::{LinearModelBank, MultiTargetBelief};
use crate::scalar::Scalar;

/// Order `p ≥ 1` and cutoff `c > 0` of the OSPA metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OspaParams {
    pub order: f64,
    pub cutoff: f64,
}

impl OspaParams {
    pub fn new(order: f64, cutoff: f64) -> Result<Self> {
        if !(order >= 1.0 && order.is_finite()) {
            return Err(config(format!("OSPA order must be >= 1, got {order}")));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(config(format!("OSPA cutoff must be > 0, got {cutoff}")));
        }
        Ok(Self { order, cutoff })
    }
}

impl Default for OspaParams {
    fn default() -> Self {
        Self { order: 1.0, cutoff: 10.0 }
    }
}

/// `min(‖a_i − b_j‖, c)^p` for every pair.
pub fn ospa_cost_matrix<T: Scalar>(a: &[DVector<T>], b: &[DVector<T>], params: OspaParams) -> DMatrix<T> {
    let (p, c) = (T::lit(params.order), T::lit(params.cutoff));
    DMatrix::from_fn(a.len(), b.len(), |i, j| (&a[i] - &b[j]).norm().min(c).powf(p))
}

/// OSPA distance between two point sets of equal cardinality.
pub fn ospa<T: Scalar>(a: &[DVector<T>], b: &[DVector<T>], params: OspaParams) -> Result<T> {
    if a.len() != b.len() {
        return Err(precondition(format!("OSPA needs equal cardinalities, got {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(T::zero());
    }
    if a.iter().chain(b).any(|v| v.len() != a[0].len()) {
        return Err(precondition("OSPA points must share one dimension"));
    }
    let best = hungarian(&ospa_cost_matrix(a, b, params))?;
    Ok((best.total_cost / T::from_count(a.len())).powf(T::lit(1.0 / params.order)))
}

/// Which part of each target's estimate is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointExtraction {
    /// `H_l x̂_l`.
    #[default]
    Measurement,
    /// `x̂_l[offset..offset + len]`.
    StateBlock { offset: usize, len: usize },
}

/// One point per target extracted from the belief.
pub fn point_estimates<T: Scalar>(
    belief: &MultiTargetBelief<T>,
    bank: &LinearModelBank<T>,
    extraction: PointExtraction,
) -> Result<Vec<DVector<T>>> {
    bank.check_belief(belief)?;
    let states: Vec<DVector<T>> = (0..belief.num_targets()).map(|l| belief.target_mean(l).into_owned()).collect();
    extract_points(&states, bank, extraction)
}

/// Same extraction applied to explicit per-target states (e.g. ground truth).
pub fn extract_points<T: Scalar>(
    states: &[DVector<T>],
    bank: &LinearModelBank<T>,
    extraction: PointExtraction,
) -> Result<Vec<DVector<T>>> {
    match extraction {
        PointExtraction::Measurement => {
            Ok(states.iter().zip(bank.targets()).map(|(x, model)| model.h() * x).collect())
        }
        PointExtraction::StateBlock { offset, len } => {
            if len == 0 || offset + len > bank.state_dim() {
                return Err(config(format!(
                    "state block {offset}..{} is outside the state dimension {}",
                    offset + len,
                    bank.state_dim()
                )));
            }
            Ok(states.iter().map(|x| x.rows(offset, len).into_owned()).collect())
        }
    }
}

/// `sqrt( (1/N) Σ_l ‖e_l − t_l‖² )` for label-aligned points.
pub fn labeled_rmse<T: Scalar>(estimates: &[DVector<T>], truth: &[DVector<T>]) -> Result<T> {
    if estimates.len() != truth.len() {
        return Err(precondition(format!("{} estimates for {} targets", estimates.len(), truth.len())));
    }
    if estimates.is_empty() {
        return Ok(T::zero());
    }
    let sum = estimates.iter().zip(truth).fold(T::zero(), |acc, (e, t)| acc + (e - t).norm_squared());
    Ok((sum / T::from_count(truth.len())).sqrt())
}
