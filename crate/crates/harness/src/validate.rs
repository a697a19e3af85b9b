//! Closed-form moments against the Monte Carlo oracle on random problems.

use std::fmt::Write as _;
use std::time::Instant;

use ksme_core::oracle::{agreement, random_case};
use ksme_core::{mc_pseudo_moments, pseudo_moments};
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::report::{OutputFormat, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSettings {
    pub cases: usize,
    pub samples: usize,
    /// Allowed `|closed − mc|` in oracle standard errors.
    pub sigmas: f64,
    pub seed: u64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self { cases: 20, samples: 1_000_000, sigmas: 5.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub label: String,
    pub checked: usize,
    pub failures: usize,
    pub worst_z: f64,
    pub worst_entry: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub settings: ValidationSettings,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.failures == 0)
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => {
                let mut out = format!("# schema_version={SCHEMA_VERSION}\ncase,checked,failures,worst_z,worst_entry\n");
                for r in &self.rows {
                    writeln!(out, "{},{},{},{},{}", r.label, r.checked, r.failures, r.worst_z, r.worst_entry).unwrap();
                }
                out
            }
            OutputFormat::Json => serde_json::to_string_pretty(self).expect("report is serialisable") + "\n",
        }
    }
}

/// Compares `pseudo_moments` with `mc_pseudo_moments` on
/// `settings.cases` random configurations.
pub fn validate_moments(settings: &ValidationSettings) -> Result<ValidationReport> {
    if settings.cases == 0 {
        return Err(HarnessError::config("cases", "must be positive"));
    }
    let rows = (0..settings.cases as u64)
        .map(|i| {
            let clock = Instant::now();
            let case = random_case(settings.seed, i).map_err(|e| HarnessError::Numerical(e.to_string()))?;
            let closed = pseudo_moments(&case.prior, &case.bank, &case.kernel, &case.tests)
                .map_err(|e| HarnessError::Numerical(e.to_string()))?;
            let mc = mc_pseudo_moments(&case.prior, &case.bank, &case.kernel, &case.tests, settings.samples, settings.seed ^ i)
                .map_err(|e| HarnessError::config("samples", e.to_string()))?;
            let a = agreement(&closed, &mc, settings.sigmas);
            Ok(ValidationRow {
                label: case.label,
                checked: a.checked,
                failures: a.failures,
                worst_z: a.worst_z,
                worst_entry: a.worst_entry,
                seconds: clock.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport { settings: settings.clone(), rows })
}
