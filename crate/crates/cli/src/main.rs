use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use expodelay_cli::{commands, exit};

#[derive(Parser)]
#[command(name = "expodelay", version, about = "Delay and neutral equations solved in exponentially weighted spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a configured problem and write the solution CSV plus `<out>.report`.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a symbol of the inverse derivative to a CSV series.
    Transform {
        /// e.g. `delay:h=1`, `fractional:alpha=0.5`, `integrate`, `convolution:kernel=k.csv`
        #[arg(long)]
        symbol: String,
        #[arg(long)]
        rho: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a diagnostic: causality, memory, autonomy, rho_independence or trace.
    Diagnose { kind: String, config: PathBuf },
    /// Write the method-of-steps reference solution.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::CONFIG,
            };
            return ExitCode::from(code as u8);
        }
    };
    let code = match cli.command {
        Command::Solve { config, out } => commands::run_solve(&config, &out),
        Command::Transform { symbol, rho, input, out } => commands::run_transform(&symbol, rho, &input, &out),
        Command::Diagnose { kind, config } => commands::run_diagnose(&kind, &config),
        Command::Oracle { config, out } => commands::run_oracle(&config, &out),
    };
    ExitCode::from(code as u8)
}
