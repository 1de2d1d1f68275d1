//! Command-line entry point: runs the pipeline stages from a JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use epiforge::config::RunConfig;
use epiforge::dataset::SplitMode;
use epiforge::pipeline;

#[derive(Parser)]
#[command(
    name = "epiforge",
    about = "Calibrates uncertainty-aware social-SIAR models, augments training data, and trains neural epidemic forecasters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the JSON run configuration.
    #[arg(long, global = true, default_value = "config/sample.json")]
    config: PathBuf,

    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the config's train/test split mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Short,
    Long,
}

#[derive(Subcommand)]
enum Command {
    /// Two-phase model calibration against the reported data.
    Calibrate,
    /// Synthetic trajectory generation from the calibrated model.
    Augment,
    /// Physics-informed network training.
    TrainPinn,
    /// Autoregressive network training.
    TrainNar,
    /// Closed-loop and surface forecasts from the trained checkpoints.
    Forecast,
    /// Error tables, cost report, and peak metrics.
    Evaluate,
    /// Every stage in order.
    RunAll,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outputs; anything else is a
            // usage error.
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(64)
                }
            };
        }
    };

    if let Ok(threads) = std::env::var("EPIFORGE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }

    let mut cfg = match RunConfig::load(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(mode) = cli.mode {
        cfg.split_mode = match mode {
            Mode::Short => SplitMode::ShortTerm,
            Mode::Long => SplitMode::LongTerm,
        };
    }

    let (stage, result) = match cli.command {
        Command::Calibrate => ("calibrate", pipeline::cmd_calibrate(&cfg)),
        Command::Augment => ("augment", pipeline::cmd_augment(&cfg)),
        Command::TrainPinn => ("train-pinn", pipeline::cmd_train_pinn(&cfg)),
        Command::TrainNar => ("train-nar", pipeline::cmd_train_nar(&cfg)),
        Command::Forecast => ("forecast", pipeline::cmd_forecast(&cfg)),
        Command::Evaluate => ("evaluate", pipeline::cmd_evaluate(&cfg)),
        Command::RunAll => ("run-all", pipeline::cmd_run_all(&cfg)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{stage}: {e}");
            ExitCode::from(2)
        }
    }
}
