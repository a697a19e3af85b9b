use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ksme_harness::{
    parse_tracker_list, run_complexity_bench, run_scenario, validate_moments, worker_pool, BenchSettings, HarnessError,
    OutputFormat, Result, ScenarioConfig, ValidationSettings,
};

/// Kernel-SME multi-target tracking experiments.
///
/// Exit status: 0 success, 2 invalid configuration, 3 numerical failure
/// (more than 5% of runs failed, or moments disagree with the oracle).
#[derive(Parser)]
#[command(name = "ksme", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Output {
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
    /// Master seed; overrides the scenario file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and report mean OSPA per tracker and step.
    Run {
        scenario: PathBuf,
        /// Comma-separated subset of kernel-sme, gnn, oracle-kf, predict-only.
        #[arg(long)]
        trackers: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Time the measurement update for several target counts.
    Bench {
        /// Scenario used as a template; defaults to the eight-target scenario.
        scenario: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
        counts: Vec<usize>,
        /// Timing samples per target count.
        #[arg(long, default_value_t = 9)]
        samples: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Compare closed-form moments with the Monte Carlo oracle.
    ValidateMoments {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 5.0)]
        sigmas: f64,
        #[command(flatten)]
        output: Output,
    },
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::from_file(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, trackers, output } => {
            let mut cfg = load(Some(&scenario), output.seed)?;
            if let Some(list) = trackers {
                cfg.trackers = parse_tracker_list(&list)?;
            }
            let report = run_scenario(&cfg)?;
            emit(&report.render(output.format), output.out.as_deref())?;
            for f in &report.failures {
                let tracker = f.tracker.map_or("simulation".to_string(), |t| t.to_string());
                eprintln!("run {} failed at step {} ({tracker}): {}", f.run, f.step, f.message);
            }
            if report.too_many_failures() {
                return Err(HarnessError::Numerical(format!(
                    "{} of {} runs failed",
                    report.failures.len(),
                    report.runs_attempted
                )));
            }
        }
        Command::Bench { scenario, counts, samples, output } => {
            let cfg = load(scenario.as_deref(), output.seed)?;
            let settings = BenchSettings { samples, ..BenchSettings::default() };
            let report = run_complexity_bench(&cfg, &counts, &settings)?;
            emit(&report.render(output.format), output.out.as_deref())?;
        }
        Command::ValidateMoments { cases, samples, sigmas, output } => {
            let settings = ValidationSettings { cases, samples, sigmas, seed: output.seed.unwrap_or(0) };
            let report = worker_pool()?.install(|| validate_moments(&settings))?;
            emit(&report.render(output.format), output.out.as_deref())?;
            if !report.passed() {
                return Err(HarnessError::Numerical("closed-form moments disagree with the oracle".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ksme: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
