mod cmd;
mod config;
mod error;
mod run;
mod table;

use clap::error::ErrorKind;
use clap::Parser;
use config::CliConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Quantitative IHC scoring for ER, PR, Ki67 and HER2.
#[derive(Debug, Parser)]
#[command(name = "ihcq", version)]
struct Cli {
    /// TOML config file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: cmd::Command,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = CliConfig::load(cli.config.as_deref())
        .map(|c| c.with_overrides(cli.workers, cli.seed))
        .and_then(|cfg| cli.command.run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
