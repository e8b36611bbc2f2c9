use anyhow::Result;
use clap::{Parser, Subcommand};
use mixflow_cli::commands;
use mixflow_cli::output::OutputFormat;
use std::path::PathBuf;
use std::process::ExitCode;

/// Isothermal compressible mixture flow toolkit (1-D).
#[derive(Parser)]
#[command(name = "mixflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the flux-matrix identities, coercivity bounds and the
    /// determinant identity; prints a JSON report.
    VerifyMatrices {
        #[arg(long)]
        config: PathBuf,
        /// Seed of the randomized state sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Randomized sample count.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Round-trip report of the symmetrizing change of variables.
    Transform {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Evolve the frozen-coefficient linear system from the scenario's
    /// initial data with zero right-hand sides.
    SolveLinear {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: OutputFormat,
    },
    /// Run the fixed-point iteration and write the contraction report,
    /// per-iteration norms and recovered field snapshots.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: OutputFormat,
        /// Unused by the deterministic solver; accepted for interface
        /// stability.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Batch runner over a parameter grid; emits one CSV row per case.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep specification (lists of t / amp / n_interior / n_steps).
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
        /// Parallel workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::VerifyMatrices {
            config,
            seed,
            samples,
        } => commands::verify_matrices(&config, seed, samples),
        Command::Transform {
            config,
            seed,
            samples,
        } => commands::transform(&config, seed, samples),
        Command::SolveLinear {
            config,
            out,
            format,
        } => commands::solve_linear(&config, &out, format),
        Command::Solve {
            config,
            out,
            format,
            seed: _,
        } => commands::solve(&config, &out, format),
        Command::Sweep {
            config,
            grid,
            out,
            jobs,
        } => commands::sweep(&config, &grid, &out, jobs),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MIXFLOW_LOG")).init();
    match run() {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("mixflow: {e:#}");
            ExitCode::FAILURE
        }
    }
}
