use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use portopt_cli::{commands, config, CliError};

/// Portfolio construction and price forecasting over daily close prices.
#[derive(Parser)]
#[command(name = "portopt", version, about)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the raw prices CSV and write the canonical cache.
    Ingest,
    /// Per-ticker statistics plus covariance/correlation matrices.
    Stats,
    /// Sample random portfolios and write one row per candidate.
    Frontier,
    /// Pick the minimum-risk and maximum-Sharpe portfolios.
    Optimize,
    /// Train one forecasting model per ticker.
    Train,
    /// Predict each ticker's close at the horizon date.
    Predict,
    /// Value the optimized portfolio over the hold-out window.
    Backtest {
        /// Predicted-price CSV; defaults to the `predict` artifact when
        /// present.
        #[arg(long)]
        predicted: Option<PathBuf>,
    },
    /// Aggregate backtest reports into a summary CSV.
    Summary {
        /// Backtest report JSON paths, in output order.
        reports: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let cfg = config::load(&config_path, cli.seed, cli.out.as_deref())?;
    match cli.command {
        Command::Ingest => commands::cmd_ingest(&cfg),
        Command::Stats => commands::cmd_stats(&cfg),
        Command::Frontier => commands::cmd_frontier(&cfg),
        Command::Optimize => commands::cmd_optimize(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Predict => commands::cmd_predict(&cfg),
        Command::Backtest { predicted } => commands::cmd_backtest(&cfg, predicted.as_deref()),
        Command::Summary { reports } => commands::cmd_summary(&cfg, &reports),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
