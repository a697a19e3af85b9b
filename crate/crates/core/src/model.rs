//! Linear-Gaussian multi-target models, the joint Gaussian belief, the
//! Kalman time update and the ground-truth simulator.
//!
//! Targets are stacked in a fixed order `1..N`. The measurements of one scan
//! carry no order: the simulator shuffles them with a uniformly drawn
//! permutation and keeps that permutation only as hidden bookkeeping.

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{config, precondition, Result};
use crate::linalg::{self, block_diagonal, check_psd, psd_factor};
use crate::scalar::Scalar;

/// Measurement and motion model of one target.
///
/// `y = H x + v`, `v ~ N(0, Cv)` and `x' = A x + w`, `w ~ N(0, Cw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleTargetModel<T: Scalar> {
    h: DMatrix<T>,
    cv: DMatrix<T>,
    a: DMatrix<T>,
    cw: DMatrix<T>,
    cv_factor: DMatrix<T>,
    cw_factor: DMatrix<T>,
}

impl<T: Scalar> SingleTargetModel<T> {
    pub fn new(h: DMatrix<T>, cv: DMatrix<T>, a: DMatrix<T>, cw: DMatrix<T>) -> Result<Self> {
        let (d, n) = h.shape();
        if n == 0 || d == 0 {
            return Err(config("H must have at least one row and one column"));
        }
        if a.shape() != (n, n) {
            return Err(config(format!("A must be {n}x{n}, got {}x{}", a.nrows(), a.ncols())));
        }
        if cv.shape() != (d, d) {
            return Err(config(format!("Cv must be {d}x{d}, got {}x{}", cv.nrows(), cv.ncols())));
        }
        if cw.shape() != (n, n) {
            return Err(config(format!("Cw must be {n}x{n}, got {}x{}", cw.nrows(), cw.ncols())));
        }
        if h.iter().chain(a.iter()).any(|v| !v.finite()) {
            return Err(config("H and A must be finite"));
        }
        check_psd(&cv, "Cv")?;
        check_psd(&cw, "Cw")?;
        let cv_factor = psd_factor(&cv);
        let cw_factor = psd_factor(&cw);
        Ok(Self { h, cv, a, cw, cv_factor, cw_factor })
    }

    /// `H = A = I` random walk observed directly, with `Cv = cv·I` and
    /// `Cw = cw·I`.
    pub fn random_walk(dim: usize, cv: T, cw: T) -> Result<Self> {
        let eye = DMatrix::<T>::identity(dim, dim);
        Self::new(eye.clone(), &eye * cv, eye.clone(), &eye * cw)
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn meas_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &DMatrix<T> {
        &self.h
    }

    pub fn cv(&self) -> &DMatrix<T> {
        &self.cv
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn cw(&self) -> &DMatrix<T> {
        &self.cw
    }

    /// Square-root factor of `Cv` (`L Lᵀ = Cv`).
    pub fn cv_factor(&self) -> &DMatrix<T> {
        &self.cv_factor
    }

    /// Square-root factor of `Cw`.
    pub fn cw_factor(&self) -> &DMatrix<T> {
        &self.cw_factor
    }
}

/// The per-target models and their block-diagonal stacked forms.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelBank<T: Scalar> {
    targets: Vec<SingleTargetModel<T>>,
    stacked_h: DMatrix<T>,
    stacked_a: DMatrix<T>,
    stacked_cv: DMatrix<T>,
    stacked_cw: DMatrix<T>,
}

/// Builds the stacked model of `targets`. All targets must share state and
/// measurement dimensions.
pub fn stack_models<T: Scalar>(targets: Vec<SingleTargetModel<T>>) -> Result<LinearModelBank<T>> {
    let first = targets.first().ok_or_else(|| config("model bank needs at least one target"))?;
    let (n, d) = (first.state_dim(), first.meas_dim());
    for (l, t) in targets.iter().enumerate() {
        if t.state_dim() != n || t.meas_dim() != d {
            return Err(config(format!(
                "target {l} has state/measurement dims {}/{}, expected {n}/{d}",
                t.state_dim(),
                t.meas_dim()
            )));
        }
    }
    let stack = |f: fn(&SingleTargetModel<T>) -> &DMatrix<T>| {
        block_diagonal(&targets.iter().map(f).collect::<Vec<_>>())
    };
    Ok(LinearModelBank {
        stacked_h: stack(SingleTargetModel::h),
        stacked_a: stack(SingleTargetModel::a),
        stacked_cv: stack(SingleTargetModel::cv),
        stacked_cw: stack(SingleTargetModel::cw),
        targets,
    })
}

impl<T: Scalar> LinearModelBank<T> {
    /// `count` copies of the same target model.
    pub fn homogeneous(model: SingleTargetModel<T>, count: usize) -> Result<Self> {
        stack_models(vec![model; count])
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn state_dim(&self) -> usize {
        self.targets[0].state_dim()
    }

    pub fn meas_dim(&self) -> usize {
        self.targets[0].meas_dim()
    }

    /// Dimension of the stacked state `N·n`.
    pub fn joint_dim(&self) -> usize {
        self.num_targets() * self.state_dim()
    }

    pub fn target(&self, l: usize) -> &SingleTargetModel<T> {
        &self.targets[l]
    }

    pub fn targets(&self) -> &[SingleTargetModel<T>] {
        &self.targets
    }

    pub fn stacked_h(&self) -> &DMatrix<T> {
        &self.stacked_h
    }

    pub fn stacked_a(&self) -> &DMatrix<T> {
        &self.stacked_a
    }

    pub fn stacked_cv(&self) -> &DMatrix<T> {
        &self.stacked_cv
    }

    pub fn stacked_cw(&self) -> &DMatrix<T> {
        &self.stacked_cw
    }

    pub(crate) fn check_belief(&self, belief: &MultiTargetBelief<T>) -> Result<()> {
        if belief.num_targets() != self.num_targets() || belief.state_dim() != self.state_dim() {
            return Err(precondition(format!(
                "belief has {} targets of dim {}, model bank has {} of dim {}",
                belief.num_targets(),
                belief.state_dim(),
                self.num_targets(),
                self.state_dim()
            )));
        }
        Ok(())
    }
}

/// Joint Gaussian `N(x̂, C)` over the stacked state of all targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTargetBelief<T: Scalar> {
    mean: DVector<T>,
    cov: DMatrix<T>,
    num_targets: usize,
    state_dim: usize,
}

impl<T: Scalar> MultiTargetBelief<T> {
    /// Validates shapes and positive semi-definiteness, then stores a
    /// symmetrised copy of `cov`.
    pub fn new(mean: DVector<T>, cov: DMatrix<T>, num_targets: usize) -> Result<Self> {
        if num_targets == 0 || mean.is_empty() || mean.len() % num_targets != 0 {
            return Err(config(format!("mean length {} is not a multiple of {num_targets} targets", mean.len())));
        }
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(config(format!(
                "covariance must be {0}x{0}, got {1}x{2}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.finite()) {
            return Err(config("mean has non-finite entries"));
        }
        check_psd(&cov, "belief covariance")?;
        Ok(Self::from_parts(mean, cov, num_targets))
    }

    /// Stacks per-target means under a joint covariance.
    pub fn from_target_means(means: &[DVector<T>], cov: DMatrix<T>) -> Result<Self> {
        let n = means.first().map_or(0, |m| m.len());
        if means.iter().any(|m| m.len() != n) {
            return Err(config("per-target means must share one dimension"));
        }
        let mean = DVector::from_iterator(means.len() * n, means.iter().flat_map(|m| m.iter().copied()));
        Self::new(mean, cov, means.len())
    }

    /// Internal constructor for update results; symmetrises and skips the
    /// eigen-check.
    pub(crate) fn from_parts(mean: DVector<T>, mut cov: DMatrix<T>, num_targets: usize) -> Self {
        linalg::symmetrize(&mut cov);
        let state_dim = mean.len() / num_targets;
        Self { mean, cov, num_targets, state_dim }
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    pub fn num_targets(&self) -> usize {
        self.num_targets
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Mean `x̂_l` of target `l`.
    pub fn target_mean(&self, l: usize) -> DVectorView<'_, T> {
        self.mean.rows(l * self.state_dim, self.state_dim)
    }

    /// Cross-covariance block `C^{x_i x_l}`.
    pub fn cross_block(&self, i: usize, l: usize) -> DMatrixView<'_, T> {
        let n = self.state_dim;
        self.cov.view((i * n, l * n), (n, n))
    }

    /// Columns `C^{x x_l}` of the joint covariance belonging to target `l`.
    pub fn target_columns(&self, l: usize) -> DMatrixView<'_, T> {
        self.cov.columns(l * self.state_dim, self.state_dim)
    }

    /// Mean diagonal entry `trace(C) / (N·n)`.
    pub fn mean_variance(&self) -> T {
        linalg::trace(&self.cov) / T::from_count(self.mean.len())
    }

    /// Smallest covariance eigenvalue divided by [`Self::mean_variance`].
    /// Zero covariance reports zero.
    pub fn normalized_min_eigenvalue(&self) -> T {
        let scale = self.mean_variance();
        let lam = linalg::min_eigenvalue(&self.cov);
        if scale > T::zero() {
            lam / scale
        } else {
            lam
        }
    }

    /// `true` when the smallest eigenvalue is at least `-1e-9 · trace/(N·n)`.
    pub fn is_numerically_psd(&self) -> bool {
        let floor = T::lit(-1e-9) * self.mean_variance().max(T::zero());
        linalg::min_eigenvalue(&self.cov) >= floor
    }
}

/// Kalman time update `x̂ ← A x̂`, `C ← A C Aᵀ + Cw`.
pub fn predict<T: Scalar>(belief: &MultiTargetBelief<T>, bank: &LinearModelBank<T>) -> Result<MultiTargetBelief<T>> {
    bank.check_belief(belief)?;
    let a = bank.stacked_a();
    let mean = a * belief.mean();
    let cov = a * belief.cov() * a.transpose() + bank.stacked_cw();
    Ok(MultiTargetBelief::from_parts(mean, cov, belief.num_targets()))
}

/// The unordered measurements of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet<T: Scalar> {
    measurements: Vec<DVector<T>>,
    true_permutation: Option<Vec<usize>>,
}

impl<T: Scalar> MeasurementSet<T> {
    pub fn new(measurements: Vec<DVector<T>>) -> Result<Self> {
        let d = measurements.first().map(|m| m.len()).ok_or_else(|| config("measurement set is empty"))?;
        if d == 0 || measurements.iter().any(|m| m.len() != d) {
            return Err(config("measurements must share one nonzero dimension"));
        }
        if measurements.iter().any(|m| m.iter().any(|v| !v.finite())) {
            return Err(config("measurements must be finite"));
        }
        Ok(Self { measurements, true_permutation: None })
    }

    /// Attaches the hidden association: target `l` produced
    /// `measurements[permutation[l]]`.
    pub fn with_true_permutation(measurements: Vec<DVector<T>>, permutation: Vec<usize>) -> Result<Self> {
        let mut set = Self::new(measurements)?;
        if !is_permutation(&permutation, set.len()) {
            return Err(config(format!("{permutation:?} is not a permutation of 0..{}", set.len())));
        }
        set.true_permutation = Some(permutation);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.measurements[0].len()
    }

    pub fn measurements(&self) -> &[DVector<T>] {
        &self.measurements
    }

    pub fn true_permutation(&self) -> Option<&[usize]> {
        self.true_permutation.as_deref()
    }

    /// Drops the hidden association.
    pub fn without_permutation(&self) -> Self {
        Self { measurements: self.measurements.clone(), true_permutation: None }
    }

    /// Reorders the list so that entry `k` is the old entry `order[k]`,
    /// keeping any recorded association consistent.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        if !is_permutation(order, self.len()) {
            return Err(precondition(format!("{order:?} is not a permutation of 0..{}", self.len())));
        }
        let measurements = order.iter().map(|&k| self.measurements[k].clone()).collect();
        let true_permutation = self.true_permutation.as_ref().map(|perm| {
            let mut new_index = vec![0; order.len()];
            for (k, &old) in order.iter().enumerate() {
                new_index[old] = k;
            }
            perm.iter().map(|&old| new_index[old]).collect()
        });
        Ok(Self { measurements, true_permutation })
    }

    /// Measurements rearranged into target order, when the association is
    /// known.
    pub fn in_target_order(&self) -> Option<Vec<DVector<T>>> {
        self.true_permutation
            .as_ref()
            .map(|perm| perm.iter().map(|&k| self.measurements[k].clone()).collect())
    }

    /// Indices that sort the measurements lexicographically.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&i, &j| {
            let (a, b) = (&self.measurements[i], &self.measurements[j]);
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.to_f64_lossless().total_cmp(&y.to_f64_lossless()))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        idx
    }
}

pub(crate) fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &k in p {
        if k >= n || seen[k] {
            return false;
        }
        seen[k] = true;
    }
    true
}

/// True target states at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T: Scalar> {
    pub states: Vec<DVector<T>>,
    pub step: usize,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn new(states: Vec<DVector<T>>) -> Self {
        Self { states, step: 0 }
    }

    pub fn stacked(&self) -> DVector<T> {
        let n: usize = self.states.iter().map(|s| s.len()).sum();
        DVector::from_iterator(n, self.states.iter().flat_map(|s| s.iter().copied()))
    }
}

fn sample_noise<T: Scalar, R: Rng + ?Sized>(factor: &DMatrix<T>, rng: &mut R) -> DVector<T> {
    let z = DVector::from_fn(factor.ncols(), |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
    factor * z
}

/// Advances every target one step and produces a shuffled measurement set.
///
/// The permutation is drawn uniformly (Fisher-Yates) after the noise, and is
/// recorded in the returned set.
pub fn simulate_step<T: Scalar, R: Rng + ?Sized>(
    truth: &GroundTruth<T>,
    bank: &LinearModelBank<T>,
    rng: &mut R,
) -> Result<(GroundTruth<T>, MeasurementSet<T>)> {
    if truth.states.len() != bank.num_targets() {
        return Err(precondition(format!(
            "ground truth has {} targets, model bank has {}",
            truth.states.len(),
            bank.num_targets()
        )));
    }
    let mut states = Vec::with_capacity(truth.states.len());
    let mut ordered = Vec::with_capacity(truth.states.len());
    for (l, (x, model)) in truth.states.iter().zip(bank.targets()).enumerate() {
        if x.len() != model.state_dim() {
            return Err(precondition(format!("ground-truth state {l} has dimension {}", x.len())));
        }
        let next = model.a() * x + sample_noise(&model.cw_factor, rng);
        let y = model.h() * &next + sample_noise(&model.cv_factor, rng);
        states.push(next);
        ordered.push(y);
    }
    let mut slots: Vec<usize> = (0..ordered.len()).collect();
    slots.shuffle(rng);
    // target l lands in slot slots[l]
    let mut measurements = vec![DVector::zeros(0); ordered.len()];
    for (l, y) in ordered.into_iter().enumerate() {
        measurements[slots[l]] = y;
    }
    let set = MeasurementSet::with_true_permutation(measurements, slots)?;
    Ok((GroundTruth { states, step: truth.step + 1 }, set))
}
