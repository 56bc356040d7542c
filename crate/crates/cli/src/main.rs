//! Command-line front end: sweeps, single-path traces, control means and the
//! acceptance suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cvsim::config::{parse_config, RunConfig};
use cvsim::harness::{compute_control, manifest_path, run_sweep, simulate_trace, write_sweep};
use cvsim::validation::{
    run_criterion, run_validation_with, Level, ValidationOptions, ValidationReport,
};

#[derive(Parser)]
#[command(
    name = "cvsim",
    version,
    about = "Control-variate Monte Carlo for colored-noise driven systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ε sweep and write the CSV plus its manifest.
    Sweep {
        config: PathBuf,
        /// Overrides the `output` key of the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dump one coupled path as CSV.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Print the control mean E[F(U_T)] for the configured system.
    Pde { config: PathBuf },
    /// Run the acceptance criteria.
    Validate {
        /// Use the full sample sizes instead of the quick ones.
        #[arg(long)]
        full: bool,
        /// Only run these criteria (repeatable).
        #[arg(long = "criterion", value_name = "ID")]
        criteria: Vec<u8>,
        /// Also write the machine-readable report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Config(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Run(_) => 1,
            Failure::Config(_) => 2,
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Failure::Config(format!("{}:\n{e}", path.display())))
}

fn sweep(config: &Path, output: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load(config)?;
    let output = output.unwrap_or_else(|| PathBuf::from(&cfg.output));
    let (csv, manifest) = run_sweep(&cfg).map_err(run_err)?;
    write_sweep(&output, &csv, &manifest).map_err(run_err)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "wrote {} and {} ({:.1}s)",
        output.display(),
        manifest_path(&output).display(),
        manifest.wall_clock_seconds
    );
    Ok(())
}

fn simulate(config: &Path, eps: f64, trace: &Path) -> Result<(), Failure> {
    let cfg = load(config)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Failure::Config(format!(
            "--eps must be positive, got {eps}"
        )));
    }
    let text = simulate_trace(&cfg, eps).map_err(run_err)?;
    std::fs::write(trace, text).map_err(run_err)?;
    println!("wrote {}", trace.display());
    Ok(())
}

fn pde(config: &Path) -> Result<(), Failure> {
    let cfg = load(config)?;
    let c = compute_control(&cfg).map_err(run_err)?;
    println!(
        "value = {:e}\nmethod = {}\nerror_estimate = {:e}",
        c.value,
        c.method.name(),
        c.error_estimate
    );
    Ok(())
}

fn validate(full: bool, criteria: &[u8], json: Option<&Path>) -> Result<(), Failure> {
    let opts = ValidationOptions::new(if full { Level::Full } else { Level::Quick });
    let report = if criteria.is_empty() {
        run_validation_with(&opts)
    } else {
        ValidationReport {
            level: opts.level,
            results: criteria
                .iter()
                .map(|&id| run_criterion(id, &opts))
                .collect(),
        }
    };
    print!("{report}");
    if let Some(path) = json {
        std::fs::write(path, report.to_json() + "\n").map_err(run_err)?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        let failed = report.results.iter().filter(|r| !r.passed).count();
        Err(Failure::Run(format!("{failed} criteria failed")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep { config, output } => sweep(&config, output),
        Command::Simulate { config, eps, trace } => simulate(&config, eps, &trace),
        Command::Pde { config } => pde(&config),
        Command::Validate {
            full,
            criteria,
            json,
        } => validate(full, &criteria, json.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Run(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
