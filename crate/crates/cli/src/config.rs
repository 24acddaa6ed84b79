//! Pipeline configuration: one JSON document plus overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use velinv::dataset::dataset_geometry;
use velinv::geology::GeologyConfig;
use velinv::train::TrainConfig;
use velinv::unet::UNetConfig;
use velinv::wave::AcquisitionConfig;

use crate::CliError;

/// Environment variable that replaces `global_seed`.
pub const SEED_ENV: &str = "VELINV_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset_dir: PathBuf,
    pub run_dir: PathBuf,
}

/// Everything a pipeline run depends on.
///
/// `training.seed` is not read from here: training runs use `global_seed`
/// (or the command's `--seed`), and the value actually used is written back
/// into the copy of the configuration stored with the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub geology: GeologyConfig,
    pub acquisition: AcquisitionConfig,
    pub network: UNetConfig,
    pub training: TrainConfig,
    pub paths: Paths,
    pub global_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            geology: GeologyConfig::simple(),
            acquisition: AcquisitionConfig::default(),
            network: UNetConfig::default(),
            training: TrainConfig::default(),
            paths: Paths {
                dataset_dir: PathBuf::from("data/simple"),
                run_dir: PathBuf::from("runs/unet"),
            },
            global_seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Validates every section and the links between them.
    pub fn validate(&self) -> velinv::Result<()> {
        self.geology.validate()?;
        self.network.validate()?;
        self.training.validate()?;
        dataset_geometry(&self.geology, &self.acquisition)?;
        let fail = |msg: String| Err(velinv::Error::Validation(msg));
        if self.network.in_channels != self.acquisition.n_shots {
            return fail(format!(
                "network.in_channels ({}) must equal acquisition.n_shots ({})",
                self.network.in_channels, self.acquisition.n_shots
            ));
        }
        if self.network.input_hw != (self.geology.nz, self.geology.nx) {
            return fail(format!(
                "network.input_hw {:?} must equal the model extent (nz, nx) = ({}, {})",
                self.network.input_hw, self.geology.nz, self.geology.nx
            ));
        }
        Ok(())
    }
}

/// Where the configuration comes from and what to change in it. Later
/// sources win: file, then the seed variable, then `sets` in order.
#[derive(Debug, Clone, Default)]
pub struct ConfigSource {
    pub file: Option<PathBuf>,
    pub env_seed: Option<String>,
    /// `(dotted.path, value)`; values are parsed as JSON and fall back to a
    /// plain string.
    pub sets: Vec<(String, String)>,
}

impl ConfigSource {
    pub fn from_env(file: Option<PathBuf>, sets: Vec<(String, String)>) -> Self {
        Self {
            file,
            env_seed: std::env::var(SEED_ENV).ok(),
            sets,
        }
    }

    /// Builds and validates the configuration.
    pub fn load(&self) -> Result<PipelineConfig, CliError> {
        let mut value = match &self.file {
            Some(path) => read_json(path)?,
            None => serde_json::to_value(PipelineConfig::default()).expect("default serializes"),
        };
        if let Some(s) = &self.env_seed {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| CliError::validation(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
            set_path(&mut value, "global_seed", Value::from(seed))?;
        }
        for (key, raw) in &self.sets {
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            set_path(&mut value, key, v)?;
        }
        let config: PipelineConfig = serde_json::from_value(value)
            .map_err(|e| CliError::validation(format!("invalid configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("config {} is not valid JSON: {e}", path.display())))
}

/// Replaces the value at `path` (`a.b.c`). Every component must already
/// exist, so a typo is an error rather than a silently ignored key.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::validation(format!("{path}: {part:?} is not inside an object")))?;
        let slot = obj
            .get_mut(part)
            .ok_or_else(|| CliError::validation(format!("unknown configuration key {path:?}")))?;
        if parts.peek().is_none() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    Err(CliError::validation("empty configuration key"))
}

/// Splits `key=value`.
pub fn parse_set(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected KEY=VALUE, got {s:?}")),
    }
}

pub fn to_json(config: &PipelineConfig) -> String {
    let mut s = serde_json::to_string_pretty(config).expect("config serializes");
    s.push('\n');
    s
}
