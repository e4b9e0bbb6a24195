use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use kgm_harness::config::{Profile, RunConfig};
use kgm_harness::experiments;
use kgm_harness::report::RunReport;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Experiment runner for the coupled matter/potential solver.
#[derive(Parser)]
#[command(name = "kgm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports, tables, and field dumps.
    #[arg(long, global = true, default_value = "kgm-out")]
    out: PathBuf,
    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pin the grid size (fast = 9 nodes per axis, fidelity = 17).
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimise the reduced energy and dump the solution fields.
    Solve,
    /// Run the full invariant suite over random probes.
    Invariants,
    /// Sweep the coupling scale across the smallness threshold.
    SweepDelta,
    /// Zero-net-flux run: assert descent decays to zero.
    Nonexistence,
    /// Estimate the analysis constants and cross-check them.
    Constants,
    /// Report stationarity residuals of a converged solve.
    Residual,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(profile) = cli.profile {
        cfg.apply_profile(profile);
    }
    Ok(cfg)
}

fn dispatch(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    match cmd {
        Command::Solve => experiments::run_solve(cfg, out),
        Command::Invariants => experiments::run_invariants(cfg, out),
        Command::SweepDelta => experiments::run_sweep(cfg, out),
        Command::Nonexistence => experiments::run_nonexistence(cfg, out),
        Command::Constants => experiments::run_constants(cfg, out),
        Command::Residual => experiments::run_residual(cfg, out),
    }
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    let report = dispatch(&cli.command, &cfg, &cli.out)?;
    let text = report.render();
    print!("{text}");
    std::fs::write(cli.out.join("report.txt"), &text)
        .with_context(|| format!("writing {}", cli.out.join("report.txt").display()))?;
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
