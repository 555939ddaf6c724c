//! `rainrun`: command-line front-end for multiday precipitation extremes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "rainrun", version, about = "Extremes of consecutive-day precipitation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand; each mirrors a key of the flat
/// `key = value` config file, and flags override the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory of per-station daily CSV files (`date,prcp_mm`).
    #[arg(long, global = true)]
    pub daily_dir: Option<PathBuf>,
    /// Station metadata CSV (`station_id,lat,lon,cdist_km`).
    #[arg(long, global = true)]
    pub stations: Option<PathBuf>,
    /// Monthly SOI CSV (`year,month,soi`).
    #[arg(long, global = true)]
    pub soi: Option<PathBuf>,
    /// Window lengths, comma separated, each in 1..=7.
    #[arg(long, global = true)]
    pub k: Option<String>,
    /// Threshold quantile for the extremal index.
    #[arg(long, global = true)]
    pub quantile: Option<f64>,
    /// Ladder model id 0-4 or `auto` (minimum AIC).
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (file for `rl` and `scenario`; stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Fix the shape of k >= 2 fits at the k = 1 estimate.
    #[arg(long, global = true)]
    pub shape_tie: bool,
    /// Scenario horizon in years (number of simulated SOI years).
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Exceedance probability per year (comma separated for `rl`).
    #[arg(long, global = true)]
    pub p: Option<String>,
    /// Emit shortest round-trip decimals instead of 6 significant digits.
    #[arg(long, global = true)]
    pub full_precision: bool,
    /// Extremal-index estimator: `standard` or `printed`.
    #[arg(long, global = true)]
    pub estimator: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the input files and summarize stations.
    Ingest(Ingest),
    /// Windowed-minimum yearly block maxima with covariates.
    Functional(Plain),
    /// Ferro-Segers extremal index per station and window length.
    Ei(Plain),
    /// Fit one ladder model (or the AIC choice with `--model auto`).
    Fit(TableInput),
    /// Fit the whole model ladder and tabulate AIC, BIC and diagnostics.
    Select(TableInput),
    /// Goodness-of-fit diagnostics of the chosen model.
    Diagnose(TableInput),
    /// Return levels of a saved fit at fixed SOI.
    Rl(Rl),
    /// Aggregated return levels under an SOI scenario.
    Scenario(Scenario),
    /// Write a synthetic dataset in the standard input formats.
    Synth(Synth),
    /// Run every stage and write the artifact bundle.
    Pipeline(Plain),
}

#[derive(Debug, Args)]
struct Plain {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Ingest {
    #[command(flatten)]
    common: Common,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct TableInput {
    #[command(flatten)]
    common: Common,
    /// Block-maxima CSV to use instead of the raw dataset.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Rl {
    #[command(flatten)]
    common: Common,
    /// Fit record written by `fit` or `pipeline`.
    #[arg(long)]
    fit: PathBuf,
    /// Yearly SOI value to evaluate at.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    soi_value: f64,
}

#[derive(Debug, Args)]
struct Scenario {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    fit: PathBuf,
    /// `year,soi` scenario file; otherwise `--horizon` years are resampled
    /// from the historical yearly SOI in `--soi`.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    /// First year of a simulated scenario.
    #[arg(long, default_value_t = 2021)]
    start_year: i32,
}

#[derive(Debug, Args)]
struct Synth {
    #[command(flatten)]
    common: Common,
    /// Number of stations.
    #[arg(long, default_value_t = 20)]
    n_stations: usize,
    /// Number of years.
    #[arg(long, default_value_t = 30)]
    years: usize,
    #[arg(long, default_value_t = 1980)]
    start_year: i32,
    /// Moving-maximum order of the daily process.
    #[arg(long, default_value_t = 3)]
    r: usize,
    /// Probability that a day is missing.
    #[arg(long, default_value_t = 0.0005)]
    missing_rate: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
