//! Report types and their CSV / JSON renderings.
//!
//! Scenario CSV layout (one row per tracker and step, trackers in
//! configuration order):
//!
//! ```text
//! # schema_version=1
//! tracker,step,mean_ospa,se_ospa,runs
//! kernel-sme,1,0.2412...,0.0113...,30
//! ```
//!
//! Numbers use the shortest representation that round-trips, so equal
//! reports render to identical bytes. Timings are left out of the CSV and
//! only appear in JSON.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::{ScenarioConfig, TrackerKind};
use crate::scenario::{RunFailure, MAX_FAILURE_FRACTION};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSummary {
    pub step: usize,
    pub mean_ospa: f64,
    pub se_ospa: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackerSeries {
    pub tracker: TrackerKind,
    pub rows: Vec<StepSummary>,
    /// `per_run[r][k]`: OSPA of successful run `r` after step `k + 1`.
    pub per_run: Vec<Vec<f64>>,
    pub mean_update_seconds: f64,
    pub median_update_seconds: f64,
    /// Smallest `λ_min(C) / (trace(C)/(N·n))` over every run and step.
    pub worst_normalized_min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub runs_attempted: usize,
    pub failures: Vec<RunFailure>,
    pub series: Vec<TrackerSeries>,
}

impl RunReport {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn series(&self, tracker: TrackerKind) -> Option<&TrackerSeries> {
        self.series.iter().find(|s| s.tracker == tracker)
    }

    pub fn failure_fraction(&self) -> f64 {
        self.failures.len() as f64 / self.runs_attempted as f64
    }

    pub fn too_many_failures(&self) -> bool {
        self.failure_fraction() > MAX_FAILURE_FRACTION
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# schema_version={SCHEMA_VERSION}\ntracker,step,mean_ospa,se_ospa,runs\n");
        for s in &self.series {
            for r in &s.rows {
                writeln!(out, "{},{},{},{},{}", s.tracker, r.step, r.mean_ospa, r.se_ospa, r.runs).unwrap();
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema_version: u32,
            seed: u64,
            #[serde(flatten)]
            report: &'a RunReport,
        }
        let doc = Doc { schema_version: SCHEMA_VERSION, seed: self.seed(), report: self };
        serde_json::to_string_pretty(&doc).expect("report is serialisable") + "\n"
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }
}
