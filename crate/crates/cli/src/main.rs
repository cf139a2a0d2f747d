use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qattractor_cli::{
    run_analyze, run_compare_baseline, run_simulate, run_synthesize, CliError, Overrides,
    RunConfig,
};

#[derive(Debug, Parser)]
#[command(name = "qattractor", version, about = "Attractor analysis and gain design for quantized state feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for JSON and CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized steps (baseline weights).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of tau grid points, overriding the config.
    #[arg(long = "tau-grid")]
    tau_grid: Option<usize>,
    /// Synthesis stopping tolerance, overriding the config.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify the smallest attractor for the configured gain.
    Analyze(Common),
    /// Design a gain by alternating slack and gain steps.
    Synthesize(Common),
    /// Simulate the quantized closed loop.
    Simulate(Common),
    /// Compare with Lyapunov-equation attractors for random weights.
    CompareBaseline(Common),
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let (common, which) = match &cli.command {
        Command::Analyze(c) => (c, 0),
        Command::Synthesize(c) => (c, 1),
        Command::Simulate(c) => (c, 2),
        Command::CompareBaseline(c) => (c, 3),
    };
    let cfg = RunConfig::load(&common.config)?;
    let ov = Overrides {
        seed: common.seed,
        tau_grid: common.tau_grid,
        tol: common.tol,
    };
    let out = &common.out;
    Ok(match which {
        0 => run_analyze(&cfg, &ov, out)?.files,
        1 => run_synthesize(&cfg, &ov, out)?.files,
        2 => run_simulate(&cfg, &ov, out)?.files,
        _ => run_compare_baseline(&cfg, &ov, out)?.files,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
