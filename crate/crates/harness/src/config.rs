//! Scenario files.
//!
//! A scenario is a TOML document whose keys are read as flat dotted names
//! (`model.Cv = 0.1` and a `[model]` table with `Cv = 0.1` are the same
//! thing). Every key is optional; missing keys keep the eight-target
//! defaults of [`ScenarioConfig::default`]. Unknown keys are rejected.
//!
//! | key | value |
//! |-----|-------|
//! | `model.targets`, `model.state_dim`, `model.meas_dim` | positive integers |
//! | `model.H`, `model.A`, `model.Cv`, `model.Cw` | matrix |
//! | `kernel.K` | `"cv"` or matrix |
//! | `run.horizon`, `run.runs` | positive integers |
//! | `run.seed` | non-negative integer |
//! | `run.trackers` | list of `kernel-sme`, `gnn`, `oracle-kf`, `predict-only` |
//! | `init.C0` | matrix, per target (`n×n`) or joint (`Nn×Nn`) |
//! | `init.mean` | `"sampled"`, `"truth"` or one state row per target |
//! | `truth.layout` | `"circle"` or `"line"` |
//! | `truth.radius`, `truth.spacing` | numbers |
//! | `truth.positions` | one state row per target (overrides the layout) |
//! | `ospa.p`, `ospa.c` | order `≥ 1`, cutoff `> 0` |
//! | `ospa.state_block` | `[offset, len]`; default scores `H x` |
//!
//! A matrix is a number `s` (meaning `s·I`, or `s·[I 0]` for a rectangular
//! `H`), the string `"identity"`, or an explicit list of rows.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ksme_core::linalg::block_diagonal;
use ksme_core::{Kernel, ModelBank, OspaParams, PointExtraction, TargetModel};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSpec {
    Scalar(f64),
    Identity,
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    /// Materialises the matrix as `rows × cols`.
    pub fn resolve(&self, rows: usize, cols: usize, field: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            Self::Scalar(s) => DMatrix::from_fn(rows, cols, |i, j| if i == j { *s } else { 0.0 }),
            Self::Identity => DMatrix::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 }),
            Self::Rows(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(HarnessError::config(field, format!("expected a {rows}x{cols} matrix")));
                }
                DMatrix::from_fn(rows, cols, |i, j| r[i][j])
            }
        };
        if m.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::config(field, "entries must be finite"));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelWidth {
    /// `K = Cv` of the first target.
    MeasurementNoise,
    Matrix(MatrixSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMean {
    /// `x̂₀ ~ N(x̃₀, C₀)`, one draw per run.
    Sampled,
    /// `x̂₀ = x̃₀`.
    Truth,
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLayout {
    /// Evenly spaced on a circle around the origin in the first two state
    /// components, starting on the positive first axis.
    Circle { radius: f64 },
    /// `(l − (N−1)/2)·spacing` along the first state component.
    Line { spacing: f64 },
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TrackerKind {
    #[serde(rename = "kernel-sme")]
    KernelSme,
    #[serde(rename = "gnn")]
    Gnn,
    #[serde(rename = "oracle-kf")]
    OracleKf,
    #[serde(rename = "predict-only")]
    PredictOnly,
}

impl TrackerKind {
    pub const ALL: [TrackerKind; 4] = [Self::KernelSme, Self::Gnn, Self::OracleKf, Self::PredictOnly];

    pub fn name(self) -> &'static str {
        match self {
            Self::KernelSme => "kernel-sme",
            Self::Gnn => "gnn",
            Self::OracleKf => "oracle-kf",
            Self::PredictOnly => "predict-only",
        }
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrackerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| format!("unknown tracker `{s}` (expected kernel-sme, gnn, oracle-kf or predict-only)"))
    }
}

/// Parses a comma-separated tracker list, rejecting duplicates.
pub fn parse_tracker_list(s: &str) -> Result<Vec<TrackerKind>> {
    let list = s.split(',').map(|t| t.parse().map_err(|e| HarnessError::config("trackers", e))).collect::<Result<Vec<_>>>()?;
    check_trackers(&list, "trackers")?;
    Ok(list)
}

fn check_trackers(list: &[TrackerKind], field: &str) -> Result<()> {
    if list.is_empty() {
        return Err(HarnessError::config(field, "at least one tracker is required"));
    }
    for (k, t) in list.iter().enumerate() {
        if list[..k].contains(t) {
            return Err(HarnessError::config(field, format!("tracker `{t}` listed twice")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub targets: usize,
    pub state_dim: usize,
    pub meas_dim: usize,
    pub h: MatrixSpec,
    pub a: MatrixSpec,
    pub cv: MatrixSpec,
    pub cw: MatrixSpec,
    pub kernel: KernelWidth,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub trackers: Vec<TrackerKind>,
    pub initial_cov: MatrixSpec,
    pub initial_mean: InitialMean,
    pub truth: TruthLayout,
    pub ospa_order: f64,
    pub ospa_cutoff: f64,
    /// `None` scores `H x`.
    pub state_block: Option<(usize, usize)>,
}

impl Default for ScenarioConfig {
    /// Eight planar random-walk targets on the unit circle, `Cv = Cw = 0.1·I`,
    /// `C₀ = 0.5·I`, 15 steps, 30 runs, all four trackers.
    fn default() -> Self {
        Self {
            targets: 8,
            state_dim: 2,
            meas_dim: 2,
            h: MatrixSpec::Identity,
            a: MatrixSpec::Identity,
            cv: MatrixSpec::Scalar(0.1),
            cw: MatrixSpec::Scalar(0.1),
            kernel: KernelWidth::MeasurementNoise,
            horizon: 15,
            runs: 30,
            seed: 0,
            trackers: TrackerKind::ALL.to_vec(),
            initial_cov: MatrixSpec::Scalar(0.5),
            initial_mean: InitialMean::Sampled,
            truth: TruthLayout::Circle { radius: 1.0 },
            ospa_order: 1.0,
            ospa_cutoff: 10.0,
            state_block: None,
        }
    }
}

/// Everything a run needs, resolved from a [`ScenarioConfig`].
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub bank: ModelBank,
    pub kernel: Kernel,
    pub initial_cov: DMatrix<f64>,
    pub initial_truth: Vec<DVector<f64>>,
    pub ospa: OspaParams,
    pub extraction: PointExtraction,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Syntax(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut flat);
        let mut cfg = Self::default();
        for (key, value) in &flat {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Syntax(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        match key {
            "model.targets" => self.targets = positive(key, v)?,
            "model.state_dim" => self.state_dim = positive(key, v)?,
            "model.meas_dim" => self.meas_dim = positive(key, v)?,
            "model.H" => self.h = matrix(key, v)?,
            "model.A" => self.a = matrix(key, v)?,
            "model.Cv" => self.cv = matrix(key, v)?,
            "model.Cw" => self.cw = matrix(key, v)?,
            "kernel.K" => {
                self.kernel = match v.as_str() {
                    Some("cv") => KernelWidth::MeasurementNoise,
                    _ => KernelWidth::Matrix(matrix(key, v)?),
                }
            }
            "run.horizon" => self.horizon = positive(key, v)?,
            "run.runs" => self.runs = positive(key, v)?,
            "run.seed" => {
                let s = integer(key, v)?;
                self.seed = u64::try_from(s).map_err(|_| HarnessError::config(key, "must be non-negative"))?;
            }
            "run.trackers" => {
                let items = v.as_array().ok_or_else(|| HarnessError::config(key, "expected a list of tracker names"))?;
                let list = items
                    .iter()
                    .map(|t| {
                        t.as_str()
                            .ok_or_else(|| HarnessError::config(key, "tracker names must be strings"))?
                            .parse()
                            .map_err(|e| HarnessError::config(key, e))
                    })
                    .collect::<Result<Vec<_>>>()?;
                check_trackers(&list, key)?;
                self.trackers = list;
            }
            "init.C0" => self.initial_cov = matrix(key, v)?,
            "init.mean" => {
                self.initial_mean = match v.as_str() {
                    Some("sampled") => InitialMean::Sampled,
                    Some("truth") => InitialMean::Truth,
                    Some(other) => {
                        return Err(HarnessError::config(key, format!("expected \"sampled\", \"truth\" or rows, got \"{other}\"")))
                    }
                    None => InitialMean::Explicit(rows(key, v)?),
                }
            }
            "truth.layout" => {
                self.truth = match v.as_str() {
                    Some("circle") => TruthLayout::Circle { radius: self.radius_or(1.0) },
                    Some("line") => TruthLayout::Line { spacing: 1.0 },
                    _ => return Err(HarnessError::config(key, "expected \"circle\" or \"line\"")),
                }
            }
            // BTreeMap order puts `layout` before `positions`, `radius` and `spacing`.
            "truth.radius" => match &mut self.truth {
                TruthLayout::Circle { radius } => *radius = number(key, v)?,
                _ => return Err(HarnessError::config(key, "only applies to the circle layout")),
            },
            "truth.spacing" => match &mut self.truth {
                TruthLayout::Line { spacing } => *spacing = number(key, v)?,
                _ => return Err(HarnessError::config(key, "only applies to the line layout")),
            },
            "truth.positions" => self.truth = TruthLayout::Explicit(rows(key, v)?),
            "ospa.p" => self.ospa_order = number(key, v)?,
            "ospa.c" => self.ospa_cutoff = number(key, v)?,
            "ospa.state_block" => {
                let r = v
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .ok_or_else(|| HarnessError::config(key, "expected [offset, len]"))?;
                let offset = usize::try_from(integer(key, &r[0])?).map_err(|_| HarnessError::config(key, "offset must be non-negative"))?;
                self.state_block = Some((offset, positive(key, &r[1])?));
            }
            _ => return Err(HarnessError::config(key, "unknown key")),
        }
        Ok(())
    }

    fn radius_or(&self, default: f64) -> f64 {
        match self.truth {
            TruthLayout::Circle { radius } => radius,
            _ => default,
        }
    }

    /// Checks every field and the consistency between them.
    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    /// Builds the model bank, kernel, initial covariance and truth.
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        let (nt, n, d) = (self.targets, self.state_dim, self.meas_dim);
        for (field, v) in [("model.targets", nt), ("model.state_dim", n), ("model.meas_dim", d), ("run.horizon", self.horizon), ("run.runs", self.runs)] {
            if v == 0 {
                return Err(HarnessError::config(field, "must be positive"));
            }
        }
        let h = self.h.resolve(d, n, "model.H")?;
        let a = self.a.resolve(n, n, "model.A")?;
        let cv = self.cv.resolve(d, d, "model.Cv")?;
        let cw = self.cw.resolve(n, n, "model.Cw")?;
        let model = TargetModel::new(h, cv.clone(), a, cw).map_err(|e| HarnessError::config("model", e.to_string()))?;
        let bank = ModelBank::homogeneous(model, nt).map_err(|e| HarnessError::config("model.targets", e.to_string()))?;

        let kernel = match &self.kernel {
            KernelWidth::MeasurementNoise => Kernel::new(cv),
            KernelWidth::Matrix(m) => Kernel::new(m.resolve(d, d, "kernel.K")?),
        }
        .map_err(|e| HarnessError::config("kernel.K", e.to_string()))?;

        let joint = nt * n;
        let initial_cov = match &self.initial_cov {
            MatrixSpec::Rows(r) if r.len() == n && n != joint => {
                let block = self.initial_cov.resolve(n, n, "init.C0")?;
                block_diagonal(&vec![&block; nt])
            }
            spec => spec.resolve(joint, joint, "init.C0")?,
        };
        ksme_core::linalg::check_psd(&initial_cov, "C0").map_err(|e| HarnessError::config("init.C0", e.to_string()))?;

        let initial_truth = self.initial_truth()?;
        if let InitialMean::Explicit(r) = &self.initial_mean {
            check_rows("init.mean", r, nt, n)?;
        }

        let ospa = OspaParams::new(self.ospa_order, self.ospa_cutoff).map_err(|e| {
            let field = if self.ospa_order >= 1.0 && self.ospa_order.is_finite() { "ospa.c" } else { "ospa.p" };
            HarnessError::config(field, e.to_string())
        })?;
        let extraction = match self.state_block {
            None => PointExtraction::Measurement,
            Some((offset, len)) => {
                if offset + len > n {
                    return Err(HarnessError::config("ospa.state_block", format!("block exceeds state dimension {n}")));
                }
                PointExtraction::StateBlock { offset, len }
            }
        };
        Ok(ResolvedScenario { bank, kernel, initial_cov, initial_truth, ospa, extraction })
    }

    fn initial_truth(&self) -> Result<Vec<DVector<f64>>> {
        let (nt, n) = (self.targets, self.state_dim);
        let states = match &self.truth {
            TruthLayout::Circle { radius } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(HarnessError::config("truth.radius", "must be finite and non-negative"));
                }
                (0..nt)
                    .map(|l| {
                        let theta = 2.0 * std::f64::consts::PI * l as f64 / nt as f64;
                        let mut x = DVector::zeros(n);
                        x[0] = radius * theta.cos();
                        if n > 1 {
                            x[1] = radius * theta.sin();
                        }
                        x
                    })
                    .collect()
            }
            TruthLayout::Line { spacing } => {
                if !spacing.is_finite() {
                    return Err(HarnessError::config("truth.spacing", "must be finite"));
                }
                let centre = (nt as f64 - 1.0) / 2.0;
                (0..nt)
                    .map(|l| {
                        let mut x = DVector::zeros(n);
                        x[0] = (l as f64 - centre) * spacing;
                        x
                    })
                    .collect()
            }
            TruthLayout::Explicit(r) => {
                check_rows("truth.positions", r, nt, n)?;
                r.iter().map(|row| DVector::from_row_slice(row)).collect()
            }
        };
        Ok(states)
    }
}

fn check_rows(field: &str, r: &[Vec<f64>], count: usize, dim: usize) -> Result<()> {
    if r.len() != count || r.iter().any(|row| row.len() != dim) {
        return Err(HarnessError::config(field, format!("expected {count} rows of length {dim}")));
    }
    if r.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HarnessError::config(field, "entries must be finite"));
    }
    Ok(())
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn integer(key: &str, v: &toml::Value) -> Result<i64> {
    v.as_integer().ok_or_else(|| HarnessError::config(key, "expected an integer"))
}

fn positive(key: &str, v: &toml::Value) -> Result<usize> {
    match integer(key, v)? {
        i if i > 0 => Ok(i as usize),
        i => Err(HarnessError::config(key, format!("must be positive, got {i}"))),
    }
}

fn number(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(HarnessError::config(key, "expected a number")),
    }
}

fn rows(key: &str, v: &toml::Value) -> Result<Vec<Vec<f64>>> {
    let outer = v.as_array().ok_or_else(|| HarnessError::config(key, "expected a list of rows"))?;
    outer
        .iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| HarnessError::config(key, "each row must be a list of numbers"))?
                .iter()
                .map(|x| number(key, x))
                .collect()
        })
        .collect()
}

fn matrix(key: &str, v: &toml::Value) -> Result<MatrixSpec> {
    match v {
        toml::Value::String(s) if s == "identity" => Ok(MatrixSpec::Identity),
        toml::Value::String(s) => Err(HarnessError::config(key, format!("unknown matrix shorthand \"{s}\""))),
        toml::Value::Array(_) => Ok(MatrixSpec::Rows(rows(key, v)?)),
        _ => Ok(MatrixSpec::Scalar(number(key, v)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_scenario() {
        assert_eq!(ScenarioConfig::from_toml_str("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn dotted_and_table_forms_agree() {
        let a = ScenarioConfig::from_toml_str("model.Cv = 0.2\nrun.runs = 4\n").unwrap();
        let b = ScenarioConfig::from_toml_str("[model]\nCv = 0.2\n[run]\nruns = 4\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cv, MatrixSpec::Scalar(0.2));
        assert_eq!(a.runs, 4);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("model.targets = 0", "model.targets"),
            ("model.Cv = -1.0", "model"),
            ("model.H = [[1.0, 0.0]]", "model.H"),
            ("kernel.K = 0.0", "kernel.K"),
            ("init.C0 = -0.5", "init.C0"),
            ("run.trackers = [\"kernel-sme\", \"kalman\"]", "run.trackers"),
            ("ospa.c = 0", "ospa.c"),
            ("ospa.p = 0.5", "ospa.p"),
            ("truth.positions = [[0.0, 0.0]]", "truth.positions"),
            ("model.colour = 3", "model.colour"),
            ("run.seed = -4", "run.seed"),
        ];
        for (text, field) in cases {
            match ScenarioConfig::from_toml_str(text) {
                Err(HarnessError::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(ScenarioConfig::from_toml_str("model = ["), Err(HarnessError::Syntax(_))));
    }

    #[test]
    fn matrices_resolve_in_every_form() {
        let cfg = ScenarioConfig::from_toml_str(
            "model.state_dim = 3\nmodel.meas_dim = 2\nmodel.H = 2.0\nmodel.Cw = [[1,0,0],[0,2,0],[0,0,3]]\ninit.C0 = [[1,0,0],[0,1,0],[0,0,1]]\n",
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.bank.target(0).h(), &DMatrix::from_row_slice(2, 3, &[2.0, 0.0, 0.0, 0.0, 2.0, 0.0]));
        assert_eq!(r.bank.target(0).cw()[(2, 2)], 3.0);
        assert_eq!(r.initial_cov, DMatrix::identity(24, 24));
    }

    #[test]
    fn default_truth_is_on_the_unit_circle() {
        let r = ScenarioConfig::default().resolve().unwrap();
        assert_eq!(r.initial_truth.len(), 8);
        for x in &r.initial_truth {
            assert!((x.norm() - 1.0).abs() < 1e-15);
        }
        assert_eq!(r.initial_truth[0], DVector::from_vec(vec![1.0, 0.0]));
    }

    #[test]
    fn layouts_and_trackers_parse() {
        let cfg = ScenarioConfig::from_toml_str("truth.layout = \"line\"\ntruth.spacing = 2.0\nmodel.targets = 3\nrun.trackers = [\"gnn\"]").unwrap();
        assert_eq!(cfg.truth, TruthLayout::Line { spacing: 2.0 });
        let xs: Vec<f64> = cfg.resolve().unwrap().initial_truth.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![-2.0, 0.0, 2.0]);
        assert_eq!(cfg.trackers, vec![TrackerKind::Gnn]);
        assert_eq!(parse_tracker_list("oracle-kf, predict-only").unwrap(), vec![TrackerKind::OracleKf, TrackerKind::PredictOnly]);
        assert!(parse_tracker_list("gnn,gnn").is_err());
    }
}
