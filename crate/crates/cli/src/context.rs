//! Resolves a [`RunConfig`] into providers, embedders, judges and data.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use hag_core::baselines::{HagConfig, LlmGenerateConfig};
use hag_core::embed::{Embedder, HashEmbedder, HttpEmbedder};
use hag_core::grounding::{GroundingConfig, Harmonization, PersonaDatabase};
use hag_core::pace::EvalConfig;
use hag_core::persona::{DimensionSchema, Population};
use hag_core::provider::chat::LlmClient;
use hag_core::provider::http::{self, HttpBackend};
use hag_core::provider::transcript::{read_transcript, RecordingBackend, ReplayBackend, TranscriptEntry};
use hag_core::provider::{ChatBackend, MockBackend, MockTable, ProviderParams, WorldModel};

use crate::config::{EmbedderMode, JudgeMode, ProviderMode, RunConfig};
use crate::error::CliError;

pub struct Context {
    pub config: RunConfig,
    pub schema: DimensionSchema,
    backend: Arc<dyn ChatBackend>,
    model_name: String,
    embedder: Result<Box<dyn Embedder>, String>,
}

fn provider_err(e: impl std::fmt::Display) -> CliError {
    CliError::Provider(e.to_string())
}

fn mock_table(path: Option<&Path>) -> Result<MockTable, CliError> {
    match path {
        Some(p) => MockTable::load(p).map_err(|e| CliError::Data(format!("mock table {}: {e}", p.display()))),
        None => Ok(MockTable::default()),
    }
}

/// Entries of a transcript file, or of every `.jsonl` file in a directory.
fn transcript_entries(path: &Path) -> Result<Vec<TranscriptEntry>, CliError> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut entries = Vec::new();
    for f in files {
        entries.extend(read_transcript(&f).map_err(|e| CliError::Data(format!("transcript {}: {e}", f.display())))?);
    }
    Ok(entries)
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        if config.offline {
            http::set_offline(true);
        }
        let schema = match &config.paths.schema {
            Some(p) => DimensionSchema::load(p)?,
            None => DimensionSchema::default(),
        };
        let (backend, model_name): (Arc<dyn ChatBackend>, String) = match config.provider.mode {
            ProviderMode::Mock => {
                let table = mock_table(config.provider.mock_table.as_deref())?;
                let backend = MockBackend::new(table, config.provider.mock_seed);
                let name = backend.fingerprint();
                (Arc::new(backend), name)
            }
            ProviderMode::Http => {
                let backend = HttpBackend::new(config.provider.http.clone()).map_err(provider_err)?;
                (Arc::new(backend), config.provider.http.model.clone())
            }
            ProviderMode::Replay => {
                let path = config.provider.transcript.as_deref().expect("validated");
                let entries = transcript_entries(path)?;
                let name = entries.first().map(|e| e.model.clone()).unwrap_or_default();
                (Arc::new(ReplayBackend::from_entries(entries)), name)
            }
        };
        // Built eagerly but reported lazily: only some commands need it.
        let embedder: Result<Box<dyn Embedder>, String> = match config.embedder.mode {
            EmbedderMode::Hash => Ok(Box::new(HashEmbedder::new(config.embedder.dim, config.embedder.seed))),
            EmbedderMode::Http => match HttpEmbedder::new(config.embedder.http.clone()) {
                Ok(e) => Ok(Box::new(e)),
                Err(e) => Err(e.to_string()),
            },
        };
        Ok(Self { config, schema, backend, model_name, embedder })
    }

    /// Fingerprint of the world-knowledge backend.
    pub fn fingerprint(&self) -> String {
        self.backend.fingerprint()
    }

    pub fn embedder(&self) -> Result<&dyn Embedder, CliError> {
        self.embedder.as_deref().map_err(|e| CliError::Provider(format!("embedder: {e}")))
    }

    /// Chat client for the world-knowledge provider, recording to `record`
    /// when given.
    pub fn client(&self, record: Option<&Path>) -> Result<LlmClient, CliError> {
        let backend: Arc<dyn ChatBackend> = match record {
            Some(path) if self.config.provider.mode != ProviderMode::Replay => Arc::new(
                RecordingBackend::new(self.backend.clone(), path)
                    .map_err(|e| CliError::Data(format!("transcript {}: {e}", path.display())))?,
            ),
            _ => self.backend.clone(),
        };
        Ok(LlmClient::new(backend)
            .with_model(self.model_name.clone())
            .with_temperature(self.config.provider.temperature)
            .with_retries(self.config.provider.retries))
    }

    pub fn model(&self, record: Option<&Path>) -> Result<WorldModel, CliError> {
        Ok(WorldModel::from_client(self.client(record)?))
    }

    /// Transcript path for single commands.
    pub fn command_transcript(&self) -> Option<&Path> {
        self.config.provider.transcript.as_deref().filter(|_| self.config.provider.mode != ProviderMode::Replay)
    }

    pub fn params(&self) -> ProviderParams {
        let p = &self.config.params;
        ProviderParams {
            max_depth: p.max_depth,
            max_branches: p.max_branches,
            temperature: self.config.provider.temperature,
            retries: self.config.provider.retries,
        }
    }

    pub fn hag_config(&self, generator: &str) -> HagConfig {
        HagConfig {
            params: self.params(),
            min_path_prob: self.config.params.min_path_prob,
            grounding: GroundingConfig { augment_attempts: self.config.params.augment_attempts, generator: generator.into() },
        }
    }

    pub fn llm_config(&self) -> LlmGenerateConfig {
        LlmGenerateConfig { batch_size: self.config.params.batch_size, spare_batches: self.config.params.spare_batches }
    }

    pub fn eval_config(&self, seed: u64) -> EvalConfig {
        let p = &self.config.params;
        EvalConfig {
            epsilon: p.epsilon,
            k: p.k,
            z: p.z,
            sigma: p.sigma,
            margin: p.margin,
            seed,
            offline: self.config.judge.mode == JudgeMode::None
                || (self.config.offline && self.config.judge.mode == JudgeMode::Http),
        }
    }

    /// Judge client, or `None` when judging is off or would need the network
    /// in offline mode.
    pub fn judge_client(&self) -> Result<Option<LlmClient>, CliError> {
        match self.config.judge.mode {
            JudgeMode::None => Ok(None),
            JudgeMode::Mock => {
                let table = mock_table(self.config.provider.mock_table.as_deref())?;
                Ok(Some(LlmClient::new(Arc::new(MockBackend::new(table, self.config.provider.mock_seed)))))
            }
            JudgeMode::Http if self.config.offline => Ok(None),
            JudgeMode::Http => {
                let backend = HttpBackend::new(self.config.judge.http.clone()).map_err(provider_err)?;
                Ok(Some(LlmClient::new(Arc::new(backend)).with_model(self.config.judge.http.model.clone())))
            }
        }
    }

    pub fn database(&self, path: Option<&Path>) -> Result<PersonaDatabase, CliError> {
        let path = path
            .or(self.config.paths.db.as_deref())
            .ok_or_else(|| CliError::Data("no persona database configured (paths.db or --db)".into()))?;
        let harmonization = match &self.config.paths.harmonization {
            Some(p) => Harmonization::load(p)?,
            None => Harmonization::for_schema(&self.schema),
        };
        Ok(PersonaDatabase::ingest(path, &self.schema, &harmonization)?)
    }
}

pub fn load_population(path: &Path) -> Result<Population, CliError> {
    Population::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
