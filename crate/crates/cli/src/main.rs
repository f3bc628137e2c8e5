use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tls_census::config::RunConfig;
use tls_census::fitstats::FitWeighting;
use tls_census::pipeline::{
    cmd_analyze, cmd_fit, cmd_report, cmd_simulate, cmd_sweep, with_jobs, AnalyzeOptions,
    SWEEP_THRESHOLDS,
};
use tls_census::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tls-census",
    version,
    about = "Swap-spectroscopy simulation and defect-mode census"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TLS_CENSUS_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArg {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate swap spectra for every configured chip, qubit and cooldown.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        dataset: DatasetArg,
        /// Replaces the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Count defects and estimate densities.
    Analyze {
        #[command(flatten)]
        dataset: DatasetArg,
        /// Counting threshold on the raw loss.
        #[arg(long)]
        threshold: Option<f64>,
        /// Replaces the bootstrap seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Analysis parameter override, `key=value`.
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
    },
    /// Densities over a list of counting thresholds.
    Sweep {
        #[command(flatten)]
        dataset: DatasetArg,
        /// Repeatable; defaults to 0.05, 0.1, 0.2, 0.4, 0.57.
        #[arg(long = "threshold")]
        thresholds: Vec<f64>,
        #[arg(long)]
        unweighted: bool,
    },
    /// Linear fit of density against total junction area.
    Fit {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long)]
        unweighted: bool,
    },
    /// Chip table and plot-ready tables.
    Report {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long)]
        unweighted: bool,
    },
}

fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

fn weighting(unweighted: bool) -> Option<FitWeighting> {
    unweighted.then_some(FitWeighting::Unweighted)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            config,
            dataset,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let ds = cmd_simulate(&cfg, &dataset.dataset)?;
            println!(
                "wrote {} files to {}",
                ds.manifest().files.len(),
                dataset.dataset.display()
            );
        }
        Command::Analyze {
            dataset,
            threshold,
            seed,
            overrides,
        } => {
            let opts = AnalyzeOptions {
                overrides,
                threshold,
                seed,
            };
            cmd_analyze(&dataset.dataset, &opts)?;
            println!("{}", dataset.dataset.join("analysis").display());
        }
        Command::Sweep {
            dataset,
            thresholds,
            unweighted,
        } => {
            let thresholds = if thresholds.is_empty() {
                SWEEP_THRESHOLDS.to_vec()
            } else {
                thresholds
            };
            cmd_sweep(&dataset.dataset, &thresholds, weighting(unweighted))?;
            println!("{}", dataset.dataset.join("analysis/sweep.csv").display());
        }
        Command::Fit {
            dataset,
            unweighted,
        } => {
            let fit = cmd_fit(&dataset.dataset, weighting(unweighted))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&fit).map_err(|e| Error::Config(e.to_string()))?
            );
        }
        Command::Report {
            dataset,
            unweighted,
        } => {
            cmd_report(&dataset.dataset, weighting(unweighted))?;
            println!("{}", dataset.dataset.join("report").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_jobs(cli.jobs, || run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
