//! Command-line front end: configure and run experiments, run the
//! numerical verification suites, and compare regularizer variants.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use anglelab_cli::commands::{cmd_compare, cmd_run, cmd_verify, Selection, EXIT_CONFIG};
use anglelab_cli::config::{load_compare_config, load_run_config, CliError};

#[derive(Parser)]
#[command(
    name = "anglelab",
    about = "Angular-embedding training experiments and numerical verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training experiment from a TOML config.
    Run {
        /// Path to the run config.
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override, e.g. --set regularizer.eta=0.5 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for runlog.csv, runlog.json, norms_hist.csv.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run numerical verification suites and print a pass/fail table.
    Verify {
        /// Which suite to run.
        #[arg(value_enum, default_value = "all")]
        selection: Selection,
        /// Seed for the randomized checks.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run a base config against regularizer variants with matched seeds.
    Compare {
        /// Path to the compare config (a [base] table plus [[variant]]s).
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override into the compare config (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for compare.csv and compare_summary.json.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run {
            config,
            set,
            seed,
            out,
        } => {
            let cfg = load_run_config(&config, &set, seed)?;
            cmd_run(&cfg, &out)
        }
        Command::Verify { selection, seed } => cmd_verify(selection, seed),
        Command::Compare {
            config,
            set,
            seed,
            out,
        } => {
            let cfg = load_compare_config(&config, &set, seed)?;
            cmd_compare(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
