//! Experiment configuration: one TOML file covering data generation,
//! training, and artifact placement, with full defaulting. Unknown keys are
//! rejected at every nesting level so a typo cannot silently fall back to a
//! default.

use std::fs;
use std::path::{Path, PathBuf};

use dirl_core::data::ScenarioConfig;
use dirl_core::trainer::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name of the run directory created under `output_dir`.
    pub run_name: String,
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run_name: "run".into(),
            output_dir: PathBuf::from("runs"),
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Loads the config file (or defaults when `path` is None), applies flag
    /// overrides, and validates the result. All failures here are
    /// configuration errors.
    pub fn resolve(
        path: Option<&Path>,
        seed: Option<u64>,
        mode: Option<&str>,
        out: Option<&Path>,
    ) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = seed {
            cfg.scenario.seed = s;
            cfg.train.seed = s;
        }
        if let Some(m) = mode {
            cfg.train.mode = m
                .parse::<TrainMode>()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(o) = out {
            cfg.output_dir = o.to_path_buf();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.run_name.is_empty() {
            return Err(CliError::Config("run_name must not be empty".into()));
        }
        if self.run_name.contains(['/', '\\']) || self.run_name == "." || self.run_name == ".." {
            return Err(CliError::Config(format!(
                "run_name '{}' must be a plain directory name",
                self.run_name
            )));
        }
        self.scenario
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_name)
    }
}
