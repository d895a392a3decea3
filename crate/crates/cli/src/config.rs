//! Run configuration, read from TOML or JSON. Relative paths in a config
//! file resolve against the file's directory; flag values resolve against
//! the working directory.

use std::path::{Path, PathBuf};

use factgate_core::backend::{BackendConfig, OracleSource, DEFAULT_MAX_OUTPUT_TOKENS};
use factgate_core::corpus::DEFAULT_K;
use factgate_core::evalharness::DEFAULT_RESAMPLES;
use factgate_core::pipeline::PipelineOptions;
use factgate_core::PipelineMode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field} path {path} does not exist")]
    MissingPath { field: &'static str, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_mode() -> PipelineMode {
    PipelineMode::Full
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_workers() -> usize {
    1
}
fn default_seed() -> u64 {
    42
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("factgate-out")
}
fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}
fn default_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    /// Required by `evaluate` and `ablate` and by the rule oracle.
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default = "default_mode")]
    pub mode: PipelineMode,
    pub backend: BackendConfig,
    #[serde(default = "default_k")]
    pub retrieval_k: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Bootstrap seed.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_tokens")]
    pub max_output_tokens: u32,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<PipelineMode>,
    pub backend: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn parse_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&raw).map_err(|e| e.to_string()),
        _ => toml::from_str(&raw).map_err(|e| e.to_string()),
    };
    parsed.map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

fn resolve_backend(base: &Path, backend: &mut BackendConfig) {
    match &mut backend.oracle {
        Some(OracleSource::Script { path }) => resolve(base, path),
        Some(OracleSource::Rules { issue_map_path }) => resolve(base, issue_map_path),
        None => {}
    }
}

/// Parses a `--backend` value: `rules:<issue map>`, `script:<script>`, or
/// the path of a TOML/JSON file holding a backend table.
pub fn parse_backend_flag(value: &str) -> Result<BackendConfig, ConfigError> {
    if let Some(path) = value.strip_prefix("rules:") {
        return Ok(BackendConfig::rule_oracle(path));
    }
    if let Some(path) = value.strip_prefix("script:") {
        return Ok(BackendConfig::script(path));
    }
    let path = Path::new(value);
    let mut backend: BackendConfig = parse_file(path)?;
    resolve_backend(path.parent().unwrap_or(Path::new(".")), &mut backend);
    Ok(backend)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = parse_file(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.corpus_path);
        if let Some(p) = config.dataset_path.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut config.output_dir);
        resolve_backend(base, &mut config.backend);
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) -> Result<(), ConfigError> {
        if let Some(mode) = overrides.mode {
            self.mode = mode;
        }
        if let Some(spec) = &overrides.backend {
            self.backend = parse_backend_flag(spec)?;
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(workers) = overrides.workers {
            self.workers = workers;
        }
        if let Some(dir) = &overrides.output_dir {
            self.output_dir = dir.clone();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let exists = |field: &'static str, path: &Path| {
            if path.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath {
                    field,
                    path: path.to_path_buf(),
                })
            }
        };
        exists("corpus_path", &self.corpus_path)?;
        if let Some(p) = &self.dataset_path {
            exists("dataset_path", p)?;
        }
        match &self.backend.oracle {
            Some(OracleSource::Script { path }) => exists("backend.oracle.path", path)?,
            Some(OracleSource::Rules { issue_map_path }) => {
                exists("backend.oracle.issue_map_path", issue_map_path)?;
                if self.dataset_path.is_none() {
                    return Err(ConfigError::Invalid("the rule oracle needs dataset_path".into()));
                }
            }
            None => {}
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.retrieval_k == 0 {
            return Err(ConfigError::Invalid("retrieval_k must be at least 1".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(ConfigError::Invalid("bootstrap_resamples must be at least 1".into()));
        }
        self.backend
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            retrieval_k: self.retrieval_k,
            max_parse_retries: self.backend.max_parse_retries,
            max_output_tokens: self.max_output_tokens,
            trace_id: None,
        }
    }

    /// A config for the bundled fixtures with the rule oracle.
    pub fn fixture_defaults(fixtures: &Path, output_dir: PathBuf) -> Self {
        Self {
            corpus_path: fixtures.join("corpus"),
            dataset_path: Some(fixtures.join("dataset.json")),
            mode: PipelineMode::Full,
            backend: BackendConfig::rule_oracle(fixtures.join("issue_map.json")),
            retrieval_k: DEFAULT_K,
            workers: 1,
            seed: default_seed(),
            output_dir,
            bootstrap_resamples: DEFAULT_RESAMPLES,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}
