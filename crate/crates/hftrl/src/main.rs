use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hftrl::config::{Overrides, RunConfig};
use hftrl::error::EXIT_USAGE;
use hftrl::pipeline;
use hftrl::{AppError, AppResult};
use hftrl_core::env::Scenario;
use log::{error, info};

#[derive(Debug, Parser)]
#[command(name = "hftrl", version, about = "Train, tune and backtest PPO trading agents on limit order book data")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Observation scenario: c201, c202 or c203.
    #[arg(long, global = true)]
    scenario: Option<Scenario>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score training days and write the window manifest.
    Sample,
    /// Train the ensemble on the manifest windows; resumes unfinished members.
    Train {
        /// Use the learning rate and entropy coefficient found by `tune`.
        #[arg(long)]
        tuned: bool,
    },
    /// Search learning rate and entropy coefficient on the validation days.
    Tune,
    /// Backtest checkpoints on the test days and export the report.
    Test {
        /// Checkpoints to evaluate (default: every member in the output directory).
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Write the configured synthetic days as orderbook CSV files.
    Synth {
        /// Destination directory (default: <out>/data).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Recompute summary statistics from an exported trade ledger.
    Report {
        /// Trades CSV or report directory (default: <out>/report).
        path: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> AppResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        scenario: cli.scenario,
        seed: cli.seed,
        jobs: cli.jobs,
        out_dir: cli.out.clone(),
    });
    Ok(cfg)
}

fn run(cli: Cli) -> AppResult<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Sample => {
            let m = pipeline::sample(&cfg)?;
            info!("manifest: {} windows, volume_norm {}", m.windows.len(), m.volume_norm);
        }
        Command::Train { tuned } => {
            let best = if tuned { Some(pipeline::load_best(&cfg)?) } else { None };
            let out = pipeline::train(&cfg, best)?;
            info!(
                "{} members trained, {} already present",
                out.trained.len(),
                out.resumed.len()
            );
        }
        Command::Tune => {
            let (_, best) = pipeline::tune(&cfg)?;
            pipeline::print_json(&best);
        }
        Command::Test { checkpoints } => {
            let checkpoints = if checkpoints.is_empty() {
                pipeline::find_checkpoints(&cfg)?
            } else {
                checkpoints
            };
            let (report, files) = pipeline::test(&cfg, &checkpoints)?;
            pipeline::print_json(&report.summary);
            info!("report written to {}", files.summary.display());
        }
        Command::Synth { dir } => {
            let dir = dir.unwrap_or_else(|| cfg.out_dir.join("data"));
            let paths = pipeline::synth(&cfg, &dir)?;
            info!("wrote {} days under {}", paths.len(), dir.display());
        }
        Command::Report { path } => {
            let path = path.unwrap_or_else(|| cfg.out_dir.join(pipeline::REPORT_DIR));
            let check = pipeline::report(&path, cfg.scenario)?;
            pipeline::print_json(&check);
            if check.matches_export == Some(false) {
                return Err(AppError::format(
                    &check.trades_csv,
                    "exported summary disagrees with the trade ledger",
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
