use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flde::config;
use flde::experiment::{build_dataset, run_on, write_artifacts};
use flde::Error;
use flde_core::report::{summarize, system_name};

#[derive(Parser)]
#[command(name = "flde", version, about = "Federated learning with private domain experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Baseline, FL and FL+DE over the sigma grid and write CSV artifacts.
    Run {
        /// Config file, or the name of a bundled config.
        config: String,
        /// Override a config value, e.g. `--set train.rounds=500`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory; takes precedence over FLDE_OUT_DIR and the config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Resolve a config, check every invariant and print it, without training.
    Validate {
        config: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Validate { config, set } => {
            let cfg = config::load(&config, &set)?;
            print!("{}", cfg.snapshot());
            println!("# config digest: {}", cfg.digest());
            println!("# ok");
            Ok(())
        }
        Command::Run { config, set, out } => {
            let cfg = config::load(&config, &set)?;
            let dir = cfg.output_dir(out.as_deref());
            let data = build_dataset(&cfg)?;
            for w in &data.warnings {
                eprintln!("warning: {w}");
            }
            let artifacts = run_on(&cfg, data)?;
            let written = write_artifacts(&dir, &cfg, &artifacts)?;
            let rows = summarize(&artifacts.report).map_err(|e| Error::training("summary", e))?;
            println!("{:<10} {:>6} {:>10} {:>10}", "system", "sigma", "mean", "std");
            for row in rows {
                println!("{:<10} {:>6} {:>10.4} {:>10.4}", system_name(row.system), row.sigma, row.mean, row.std);
            }
            println!("wrote {} files to {}", written.len(), dir.display());
            Ok(())
        }
    }
}
