//! Association-free multi-target tracking with the Kernel-SME filter.
//!
//! The filter keeps one joint Gaussian over the stacked states of a fixed
//! number of targets. Each scan of unlabelled measurements is turned into a
//! permutation-invariant pseudo-measurement (a Gaussian mixture sampled at
//! test vectors) and fused with a linear MMSE update whose moments are
//! available in closed form.
//!
//! All numerics are generic over [`Scalar`] (`f32`, `f64`); the aliases at
//! the crate root fix the usual `f64` choice.
//!
//! Modules:
//! - [`model`]: linear-Gaussian models, belief, prediction and simulation
//! - [`kernel`]: kernel transform, test vectors, closed-form moments, update
//! - [`oracle`]: Monte Carlo estimate of the pseudo-measurement moments
//! - [`baselines`]: true-association and global-nearest-neighbour Kalman filters
//! - [`metrics`]: OSPA and labelled RMSE

pub mod assignment;
pub mod baselines;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scalar;

pub use assignment::{hungarian, Assignment};
pub use baselines::{gnn_update, oracle_kf_update};
pub use error::{Error, Result};
pub use kernel::{
    filter_step, kernel_transform_eval, measurement_update, phd_convolved_with_kernel, pseudo_moments,
    select_test_vectors, KernelConfig, PairTerms, PseudoMeasurementMoments, SameComponentTerm, TestVectorSet,
};
pub use metrics::{labeled_rmse, ospa, point_estimates, OspaParams, PointExtraction};
pub use model::{
    predict, simulate_step, stack_models, GroundTruth, LinearModelBank, MeasurementSet, MultiTargetBelief,
    SingleTargetModel,
};
pub use oracle::{mc_pseudo_moments, OracleEstimate};
pub use scalar::Scalar;

pub type Belief = MultiTargetBelief<f64>;
pub type Belief32 = MultiTargetBelief<f32>;
pub type ModelBank = LinearModelBank<f64>;
pub type ModelBank32 = LinearModelBank<f32>;
pub type TargetModel = SingleTargetModel<f64>;
pub type TargetModel32 = SingleTargetModel<f32>;
pub type Measurements = MeasurementSet<f64>;
pub type Measurements32 = MeasurementSet<f32>;
pub type Kernel = KernelConfig<f64>;
pub type Kernel32 = KernelConfig<f32>;
pub type Moments = PseudoMeasurementMoments<f64>;
pub type Truth = GroundTruth<f64>;
