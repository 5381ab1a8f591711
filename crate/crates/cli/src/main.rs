//! `nscov`: batch front end for fitting, selecting, predicting and scoring
//! covariate-driven nonstationary Gaussian-process models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "nscov", version, about = "Covariate-driven nonstationary Gaussian-process models")]
struct Cli {
    /// Worker threads for assembly, grid cells and gradients (falls back to NSCOV_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV (overrides data.path).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory, created when missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Seed for simulation, tuning splits and clustering.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Taper as FAMILY:DELTA, e.g. wendland1:0.2 (overrides the config).
    #[arg(long)]
    pub taper: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset from the [simulate] section.
    Simulate(Common),
    /// Fit the configured model and write fit.json and params.json.
    Fit(Common),
    /// Krige at the sites in --data with a saved parameter file.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Parameter file from `fit` (default: OUT/params.json).
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Grid search over the penalty weights.
    Tune(Common),
    /// k-means cluster holdout scores.
    Score {
        #[command(flatten)]
        common: Common,
        /// Reuse these estimates instead of fitting first.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Tune, two-stage fit and scored report in one run.
    Pipeline(Common),
    /// Run a scripted study.
    Study {
        /// fig3_covariate_pathologies, fig6_regularization_path or nested_model_check.
        id: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("NSCOV_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| format!("NSCOV_THREADS must be a positive integer, got '{v}'")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match threads(cli.threads) {
        Ok(Some(n)) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: cannot configure {n} threads: {e}");
                return ExitCode::from(2);
            }
        }
        Ok(Some(_)) => {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Fit(c) => commands::fit(&c),
        Command::Predict { common, params } => commands::predict(&common, params),
        Command::Tune(c) => commands::tune(&c),
        Command::Score { common, params } => commands::score(&common, params),
        Command::Pipeline(c) => commands::pipeline(&c),
        Command::Study { id, out, replicates, seed } => commands::study(&id, out, replicates, seed),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
