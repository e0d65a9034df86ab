//! Experiment configuration documents (TOML).

use std::path::{Path, PathBuf};

use safescout::learner::{default_iteration_cap, LearnerConfig};
use safescout::policy::PolicyConfig;
use safescout::EnvironmentSpec64;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// The bundled nine-cell experiment.
pub const TABLE1_PRESET: &str = include_str!("../../../table1.preset");

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "SAFESCOUT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvironmentSource {
    Inline(EnvironmentSpec64),
    /// Path to a document holding the `dimension`, `centers`, `true_p` keys,
    /// relative to the config file.
    File {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub delta: f64,
    pub n_delta: usize,
    pub n_max: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u64>,
    /// One-based starting cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_cell: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub environment: EnvironmentSource,
    pub learner: LearnerSection,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Invalid(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Reads `path`, or the bundled preset when `None`.
    pub fn load(path: Option<&Path>) -> Result<(Self, PathBuf), CliError> {
        match path {
            None => Ok((Self::parse(TABLE1_PRESET)?, PathBuf::from("."))),
            Some(p) => {
                let text = read_input(p)?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok((Self::parse(&text)?, base))
            }
        }
    }

    pub fn policy(&self) -> PolicyConfig<f64> {
        let mut policy =
            PolicyConfig::new(self.learner.delta, self.learner.n_delta, self.learner.n_max);
        if let Some(t) = self.learner.tie_tolerance {
            policy.tie_tolerance = t;
        }
        policy
    }

    /// Learner settings for replication `stream`, validated against `cells`.
    pub fn learner_config(
        &self,
        seed: u64,
        stream: u64,
        cells: usize,
    ) -> Result<LearnerConfig<f64>, CliError> {
        let policy = self.policy();
        let initial_cell = match self.learner.initial_cell {
            Some(0) => return Err(CliError::Invalid("initial_cell is one-based".into())),
            Some(k) => Some(k - 1),
            None => None,
        };
        let cfg = LearnerConfig {
            policy,
            seed,
            stream,
            max_iterations: self
                .learner
                .max_iterations
                .unwrap_or_else(|| default_iteration_cap(&policy, cells)),
            initial_cell,
        };
        cfg.validate(cells)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

/// Resolves and validates the environment; `base` anchors relative paths.
pub fn resolve_environment(
    source: &EnvironmentSource,
    base: &Path,
) -> Result<EnvironmentSpec64, CliError> {
    let env = match source {
        EnvironmentSource::Inline(e) => e.clone(),
        EnvironmentSource::File { file } => {
            let path = base.join(file);
            if !path.is_file() {
                return Err(CliError::Invalid(format!(
                    "environment file not found: {}",
                    path.display()
                )));
            }
            let text = read_input(&path)?;
            toml::from_str(&text).map_err(|e| {
                CliError::Invalid(format!("environment {}: {}", path.display(), e.message()))
            })?
        }
    };
    env.validate().map_err(|v| {
        let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
        CliError::Invalid(format!("environment: {}", msgs.join("; ")))
    })?;
    Ok(env)
}

/// CLI flag (or its env var) > config file > default.
pub fn resolve_seed(flag_or_env: Option<u64>, config: Option<u64>) -> u64 {
    flag_or_env.or(config).unwrap_or(DEFAULT_SEED)
}

/// Missing input files are invalid input, not I/O failures.
pub fn read_input(path: &Path) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::Invalid(format!(
            "file not found: {}",
            path.display()
        )));
    }
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
