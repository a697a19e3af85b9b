//! Experiment runner for the Kernel-SME tracker: scenario files, seeded
//! Monte Carlo tracking runs scored with OSPA, the update-time scaling
//! benchmark and the moment validation sweep.

pub mod bench;
pub mod config;
pub mod error;
pub mod report;
pub mod scenario;
pub mod validate;

pub use bench::{run_complexity_bench, BenchReport, BenchSettings};
pub use config::{parse_tracker_list, ScenarioConfig, TrackerKind};
pub use error::{HarnessError, Result};
pub use report::{OutputFormat, RunReport};
pub use scenario::{run_scenario, worker_pool};
pub use validate::{validate_moments, ValidationReport, ValidationSettings};
