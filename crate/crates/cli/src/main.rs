//! `netcast`: synthesize, fit, backtest and report.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numerical failure.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<netcast_core::Error> for Failure {
    fn from(e: netcast_core::Error) -> Self {
        use netcast_core::ErrorKind;
        let code = match e.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "netcast",
    version,
    about = "Forecast zero-inflated weekly counts on a region graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `data.dir`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Last training week; the following week is used for early stopping.
    #[arg(long)]
    pub train_end: Option<i32>,
    /// zip, zinb or nb.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// hybrid, structured_only or gnn_only.
    #[arg(long)]
    pub model: Option<String>,
    /// Checkpoint path; the log goes next to it as `<stem>.log.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the configuration (defaults, or a file with defaults filled in).
    Config {
        #[arg(long)]
        defaults: bool,
        #[arg(long, conflicts_with = "defaults")]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic scenario with known ground truth.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `data.dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model and write a checkpoint.
    Fit(FitArgs),
    /// Train independently seeded members and write them together.
    Ensemble {
        #[command(flatten)]
        fit: FitArgs,
        /// Overrides `training.ensemble_size`.
        #[arg(long)]
        members: Option<usize>,
    },
    /// Expanding-window backtest: scores, calibration and forecasts.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// FIRST_TRAIN_END:STEP:COUNT, e.g. 30:3:6.
        #[arg(long)]
        folds: Option<String>,
        /// Comma-separated model names.
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Forecasts of a checkpoint for a range of weeks.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// FIRST:LAST (inclusive); defaults to every week with a lag.
        #[arg(long)]
        weeks: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Covariance of the structured weights of a checkpoint.
    Covariance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partial-effect plots and forecast fan charts, each with its CSV.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Covariance file; implies `--bands`.
        #[arg(long)]
        covariance: Option<PathBuf>,
        /// Require ±2 sd bands on univariate terms.
        #[arg(long)]
        bands: bool,
        /// Forecasts CSV for per-district fan charts.
        #[arg(long)]
        forecasts: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-render a figure from its CSV.
    Render {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Config { defaults, config } => commands::print_config(defaults, config.as_deref()),
        Command::Synth {
            config,
            out_dir,
            seed,
        } => commands::synth(config.as_deref(), out_dir, seed),
        Command::Fit(args) => commands::fit(&args),
        Command::Ensemble { fit, members } => commands::ensemble(&fit, members),
        Command::Evaluate {
            common,
            folds,
            models,
            out_dir,
        } => commands::evaluate(&common, folds.as_deref(), models.as_deref(), out_dir),
        Command::Forecast {
            common,
            checkpoint,
            weeks,
            out,
        } => commands::forecast(&common, &checkpoint, weeks.as_deref(), out),
        Command::Covariance {
            common,
            checkpoint,
            out,
        } => commands::covariance(&common, &checkpoint, out),
        Command::Report {
            checkpoint,
            covariance,
            bands,
            forecasts,
            out_dir,
        } => commands::report(
            &checkpoint,
            covariance.as_deref(),
            bands,
            forecasts.as_deref(),
            out_dir,
        ),
        Command::Render { csv, out } => plot::render_file(&csv, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("netcast: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
