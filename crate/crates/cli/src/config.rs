//! Run configuration: a TOML file, environment overrides, command-line flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use hag_core::baselines::Method;
use hag_core::provider::http::{self, HttpConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Mock,
    Http,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderMode {
    Hash,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    None,
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub mode: ProviderMode,
    pub http: HttpConfig,
    pub temperature: f64,
    pub retries: u32,
    /// Mock answers; the built-in fallback is used when absent.
    pub mock_table: Option<PathBuf>,
    pub mock_seed: u64,
    /// Transcript to replay in replay mode; otherwise every exchange is
    /// recorded here. In `run`, recording goes to per-cell files instead.
    pub transcript: Option<PathBuf>,
    /// Record per-cell transcripts during `run`.
    pub record: bool,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Mock,
            http: HttpConfig::default(),
            temperature: 0.0,
            retries: 3,
            mock_table: None,
            mock_seed: 0,
            transcript: None,
            record: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSettings {
    pub mode: EmbedderMode,
    pub dim: usize,
    pub seed: u64,
    pub http: HttpConfig,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        Self {
            mode: EmbedderMode::Hash,
            dim: 256,
            seed: 0,
            http: HttpConfig { model: "text-embedding-3-small".into(), ..HttpConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSettings {
    pub mode: JudgeMode,
    pub http: HttpConfig,
}

impl Default for JudgeSettings {
    fn default() -> Self {
        Self { mode: JudgeMode::Mock, http: HttpConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub schema: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub harmonization: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    pub n: usize,
    pub max_depth: usize,
    pub max_branches: usize,
    pub min_path_prob: f64,
    pub augment_attempts: usize,
    pub batch_size: usize,
    pub spare_batches: usize,
    pub k: usize,
    pub epsilon: f64,
    pub z: f64,
    pub sigma: f64,
    pub margin: f64,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            n: 100,
            max_depth: 5,
            max_branches: 5,
            min_path_prob: 0.0,
            augment_attempts: 3,
            batch_size: 10,
            spare_batches: 10,
            k: 4,
            epsilon: 1e-6,
            z: 1.96,
            sigma: 1.0,
            margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub name: String,
    /// Reference population every method is evaluated against.
    pub gt: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub label: String,
    pub seed: u64,
    /// Experiment cells evaluated concurrently.
    pub workers: usize,
    pub offline: bool,
    pub methods: Vec<String>,
    pub topics: Vec<TopicSpec>,
    pub provider: ProviderSettings,
    pub embedder: EmbedderSettings,
    pub judge: JudgeSettings,
    pub paths: Paths,
    pub params: MethodParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            label: "run".into(),
            seed: 0,
            workers: 4,
            offline: false,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            topics: Vec::new(),
            provider: ProviderSettings::default(),
            embedder: EmbedderSettings::default(),
            judge: JudgeSettings::default(),
            paths: Paths::default(),
            params: MethodParams::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`) and applies environment overrides.
    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                let mut c: RunConfig =
                    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?;
                if let Some(base) = p.parent() {
                    c.resolve_paths(base);
                }
                c
            }
            None => RunConfig::default(),
        };
        config.apply_env();
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.paths.schema);
        fix(&mut self.paths.db);
        fix(&mut self.paths.harmonization);
        fix(&mut self.paths.output_dir);
        fix(&mut self.provider.mock_table);
        fix(&mut self.provider.transcript);
        for t in &mut self.topics {
            if t.gt.is_relative() {
                t.gt = base.join(&t.gt);
            }
        }
    }

    /// `HAG_BASE_URL`, `HAG_MODEL` and `HAG_API_KEY` configure the chat
    /// endpoint; `HAG_OFFLINE` forces offline mode.
    pub fn apply_env(&mut self) {
        self.provider.http = std::mem::take(&mut self.provider.http).with_env();
        if let Ok(key) = std::env::var(http::ENV_API_KEY) {
            self.judge.http.api_key.get_or_insert(key.clone());
            self.embedder.http.api_key.get_or_insert(key);
        }
        if http::is_offline() {
            self.offline = true;
        }
    }

    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        self.methods.iter().map(|m| m.parse::<Method>().map_err(CliError::Usage)).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Usage(format!("invalid config: {msg}")));
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.params.n == 0 {
            return bad("params.n must be at least 1");
        }
        if self.params.max_depth == 0 || self.params.max_branches == 0 {
            return bad("max_depth and max_branches must be at least 1");
        }
        if !(0.0..1.0).contains(&self.params.min_path_prob) {
            return bad("min_path_prob must lie in [0, 1)");
        }
        if self.params.k == 0 {
            return bad("k must be at least 1");
        }
        if [self.params.epsilon, self.params.margin].iter().any(|v| v.is_nan() || *v <= 0.0) {
            return bad("epsilon and margin must be positive");
        }
        if self.provider.mode == ProviderMode::Replay && self.provider.transcript.is_none() {
            return bad("replay mode needs provider.transcript");
        }
        self.methods()?;
        Ok(())
    }

    /// Effective configuration as echoed into artifacts. Secrets are never
    /// serialized.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
