//! Command-line pipeline: model generation, shot simulation, training,
//! prediction and reporting, driven by one JSON configuration.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid input or
//! configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use velinv::geology::GeologyPreset;
use velinv::unet::Architecture;

pub mod commands;
pub mod config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<velinv::Error> for CliError {
    fn from(e: velinv::Error) -> Self {
        let code = if e.is_validation() {
            EXIT_VALIDATION
        } else {
            EXIT_RUNTIME
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "velinv", version, about = "Velocity model inversion experiments with a UNet")]
pub struct Cli {
    /// Pipeline configuration (JSON). Defaults are used when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one configuration value, e.g. `--set training.lr=5e-4`.
    /// May be repeated; applied after the file and VELINV_SEED.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = config::parse_set)]
    pub sets: Vec<(String, String)>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate velocity models and a dataset manifest.
    GenModels(GenModelsArgs),
    /// Simulate the shots of every model in a dataset (resumable).
    GenShots(GenShotsArgs),
    /// Cross-validate one architecture and write its report.
    Train(TrainArgs),
    /// Predict a velocity model from a shot file with a trained checkpoint.
    Predict(PredictArgs),
    /// Summarize one or more training runs and rewrite their CSV files.
    Report(ReportArgs),
    /// Print the effective configuration as JSON.
    Config,
}

#[derive(Debug, Args)]
pub struct GenModelsArgs {
    /// Number of models.
    #[arg(long)]
    pub n: usize,
    /// Geology preset; replaces the configured structure, keeping the
    /// configured extent and cell size.
    #[arg(long)]
    pub preset: Option<GeologyPreset>,
    /// Dataset seed [default: global_seed].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: paths.dataset_dir].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenShotsArgs {
    /// Dataset directory [default: paths.dataset_dir].
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Seed recorded with the shots [default: global_seed].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `unet` (every skip connection) or `unet-mod` (no outermost skip).
    #[arg(long, value_parser = parse_arch)]
    pub arch: Architecture,
    /// Dataset directory [default: paths.dataset_dir].
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Output directory [default: paths.run_dir].
    #[arg(long, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    /// Run seed [default: global_seed].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cross-validation rounds.
    #[arg(long = "training.n_folds", value_name = "N")]
    pub n_folds: Option<usize>,
    /// Epoch limit per round.
    #[arg(long = "training.max_epochs", value_name = "N")]
    pub max_epochs: Option<usize>,
    #[arg(long = "training.batch_size", value_name = "N")]
    pub batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long = "training.early_stop_patience", value_name = "N")]
    pub early_stop_patience: Option<usize>,
    /// Adam learning rate.
    #[arg(long = "training.lr", value_name = "LR")]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train` (`checkpoints/foldNN.nncp`).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Shot file (`.sgth`).
    #[arg(long, value_name = "FILE")]
    pub shots: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Ground-truth model (`.vgrd`); adds a difference image and DSC.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories written by `train`.
    #[arg(long = "run-dir", value_name = "DIR", required = true)]
    pub run_dirs: Vec<PathBuf>,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse()
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let source = config::ConfigSource::from_env(cli.config, cli.sets);
    match cli.command {
        Command::GenModels(a) => commands::gen_models(&source.load()?, &a),
        Command::GenShots(a) => commands::gen_shots(&source.load()?, &a),
        Command::Train(a) => commands::train(&source, &a),
        Command::Predict(a) => commands::predict(&a),
        Command::Report(a) => commands::report(&a),
        Command::Config => {
            print!("{}", config::to_json(&source.load()?));
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn dotted_training_flags_parse() {
        let cli = Cli::try_parse_from([
            "velinv",
            "train",
            "--arch",
            "unet-mod",
            "--training.n_folds",
            "1",
            "--set",
            "training.lr=1e-4",
        ])
        .unwrap();
        assert_eq!(cli.sets, vec![("training.lr".to_string(), "1e-4".to_string())]);
        match cli.command {
            Command::Train(a) => {
                assert_eq!(a.arch, Architecture::UnetMod);
                assert_eq!(a.n_folds, Some(1));
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn error_codes_follow_core_classification() {
        let v: CliError = velinv::Error::Validation("x".into()).into();
        assert_eq!(v.code, EXIT_VALIDATION);
        let r: CliError = velinv::Error::NumericalBlowup { step: 3 }.into();
        assert_eq!(r.code, EXIT_RUNTIME);
    }
}
