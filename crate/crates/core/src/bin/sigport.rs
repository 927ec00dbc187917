use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use sigport::cli::{cmd_backtest, cmd_clusters, cmd_validate, RunConfig};
use sigport::Error;

#[derive(Parser)]
#[command(name = "sigport", version, about = "Signature-clustered crypto portfolio backtests")]
struct Cli {
    /// Override the config's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy in the config and write result files.
    Backtest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the cluster report for one rebalance date.
    Clusters {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        date: String,
        #[arg(long)]
        policy: String,
    },
    /// Check a price file for gaps, duplicates and malformed rows.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Backtest { config } => {
            let cfg = load_config(&config, cli.seed)?;
            let report = cmd_backtest(&cfg)?;
            for row in &report.summary {
                println!(
                    "{:<34} return {:>8.4}  vol {:>7.4}  mdd {:>6.4}  trades {:>5}",
                    row.strategy,
                    row.metrics.annualized_return,
                    row.metrics.annualized_volatility,
                    row.metrics.mdd,
                    row.total_trades
                );
            }
            println!("wrote {} files to {}", report.files.len(), cfg.output_dir.display());
            Ok(0)
        }
        Command::Clusters { config, date, policy } => {
            let cfg = load_config(&config, cli.seed)?;
            let date = NaiveDate::parse_from_str(&date, "%Y-%m-%d")
                .map_err(|e| Error::Config { field: "date".into(), reason: e.to_string() })?;
            for f in cmd_clusters(&cfg, date, &policy)? {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Validate { data } => {
            let report = cmd_validate(&data)?;
            for line in &report.lines {
                println!("{line}");
            }
            Ok(if report.issues == 0 { 0 } else { EXIT_VALIDATION })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
