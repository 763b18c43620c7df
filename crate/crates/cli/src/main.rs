use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing::{error, info};
use tracing_subscriber::EnvFilter;

use volroute::backtest::synthetic::{
    asset_name, generate_synthetic_panel, write_synthetic, SyntheticParams,
};
use volroute::config::RunConfig;
use volroute::orchestrate::{report_from_dir, run, synthetic_config_text};
use volroute::Error;

#[derive(Parser)]
#[command(
    name = "volroute",
    version,
    about = "Walk-forward routing of next-day volatility forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the walk-forward backtest and write forecasts, logs and report tables.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of assets.
        #[arg(long, value_delimiter = ',')]
        assets: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic regime-switching panel and a config to run it.
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2600)]
        days: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild the report tables from a previous run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn code_for(e: &Error) -> u8 {
    if e.is_input_error() {
        1
    } else {
        2
    }
}

fn execute(command: Command) -> Result<u8, Error> {
    match command {
        Command::Run {
            config,
            assets,
            out,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(a) = assets {
                cfg.select_assets(a);
            }
            if let Some(o) = out {
                cfg.set_output_dir(o);
            }
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            info!(hash = %cfg.hash(), out = %cfg.output_dir.display(), "starting run");
            let outcome = run(&cfg)?;
            for (asset, e) in &outcome.failures {
                error!(asset = asset.as_str(), "{e}");
            }
            Ok(outcome.exit_code() as u8)
        }
        Command::Simulate { seed, days, out } => {
            let params = SyntheticParams {
                days,
                ..SyntheticParams::default()
            };
            let panel = generate_synthetic_panel(seed, &params)?;
            write_synthetic(&out, &panel)?;
            let assets: Vec<String> = (0..panel.assets.len()).map(asset_name).collect();
            let path = out.join("volroute.conf");
            std::fs::write(&path, synthetic_config_text(&assets, seed)).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            info!(dir = %out.display(), config = %path.display(), "synthetic data written");
            Ok(0)
        }
        Command::Report { input } => {
            let report = report_from_dir(&input)?;
            info!(assets = report.assets.len(), dir = %input.display(), "report written");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(code_for(&e))
        }
    }
}
