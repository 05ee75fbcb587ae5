//! The five population generators sharing one output contract: HAG and its
//! flat ablation, plus random, retrieval and end-to-end generation baselines.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::embed::{cosine, EmbedError, Embedder};
use crate::grounding::{instantiate, GroundingConfig, GroundingError, PersonaDatabase};
use crate::persona::{DimensionSchema, PersonaRecord, PersonaVector, Population, PopulationMeta};
use crate::provider::{KnowledgeProvider, ProviderError, ProviderParams, WorldModel};
use crate::tree::{build_tree, DistributionTree, TreeError, TreeMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RandomSelect,
    TopicRetrieval,
    LlmGenerate,
    HagFlat,
    Hag,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::RandomSelect, Method::TopicRetrieval, Method::LlmGenerate, Method::HagFlat, Method::Hag];

    pub fn name(self) -> &'static str {
        match self {
            Method::RandomSelect => "random-select",
            Method::TopicRetrieval => "topic-retrieval",
            Method::LlmGenerate => "llm-generate",
            Method::HagFlat => "hag-flat",
            Method::Hag => "hag",
        }
    }

    /// Whether the method draws on the persona database.
    pub fn needs_database(self) -> bool {
        !matches!(self, Method::LlmGenerate)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm || m.name().replace('-', "") == norm)
            .ok_or_else(|| format!("unknown method `{s}` (expected one of random-select, topic-retrieval, llm-generate, hag-flat, hag)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub method: Method,
    pub topic: String,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("population size must be at least 1")]
    InvalidSize,
    #[error("the persona database is empty")]
    EmptyDatabase,
    #[error("database holds {size} records but {n} were requested")]
    DatabaseTooSmall { size: usize, n: usize },
    #[error(transparent)]
    Embedder(#[from] EmbedError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("generation stopped after {batches} batches with {produced} of {requested} valid personas")]
    GenerationBudgetExceeded { batches: usize, produced: usize, requested: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
}

fn meta(method: Method, seed: u64) -> PopulationMeta {
    PopulationMeta { generator: method.name().into(), seed, ..Default::default() }
}

/// Uniform sample of the database; with replacement only when `n` exceeds it.
pub fn random_select(db: &PersonaDatabase, topic: &str, n: usize, seed: u64) -> Result<Population, BaselineError> {
    if n == 0 {
        return Err(BaselineError::InvalidSize);
    }
    if db.is_empty() {
        return Err(BaselineError::EmptyDatabase);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let with_replacement = n > db.len();
    let picks: Vec<usize> = if with_replacement {
        (0..n).map(|_| rng.random_range(0..db.len())).collect()
    } else {
        sample(&mut rng, db.len(), n).into_vec()
    };
    let members = picks.into_iter().map(|i| db.records()[i].clone()).collect();
    let mut meta = meta(Method::RandomSelect, seed);
    meta.extra.insert("with_replacement".into(), json!(with_replacement));
    Ok(Population::new(topic, members, meta))
}

/// Top-`n` records by cosine similarity between rendered persona text and the
/// topic; ties go to the smaller source id.
pub fn topic_retrieval(
    db: &PersonaDatabase,
    topic: &str,
    n: usize,
    embedder: &dyn Embedder,
) -> Result<Population, BaselineError> {
    if n == 0 {
        return Err(BaselineError::InvalidSize);
    }
    if db.len() < n {
        return Err(BaselineError::DatabaseTooSmall { size: db.len(), n });
    }
    let query = embedder.embed_query(topic)?;
    let texts: Vec<String> = db.records().iter().map(PersonaRecord::render_text).collect();
    let vectors = embedder.embed_documents(&texts)?;
    let mut scored: Vec<(f64, usize)> = vectors.iter().enumerate().map(|(i, v)| (cosine(&query, v), i)).collect();
    let id = |i: usize| db.records()[i].source_id.as_deref().unwrap_or("");
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| id(a.1).cmp(id(b.1))).then(a.1.cmp(&b.1)));
    scored.truncate(n);
    let members = scored.iter().map(|(_, i)| db.records()[*i].clone()).collect();
    let mut meta = meta(Method::TopicRetrieval, 0);
    meta.provider = Some(embedder.fingerprint());
    meta.extra.insert(
        "similarity".into(),
        json!(scored.iter().map(|(s, i)| json!({"id": id(*i), "score": s})).collect::<Vec<_>>()),
    );
    Ok(Population::new(topic, members, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmGenerateConfig {
    pub batch_size: usize,
    /// Extra batches allowed beyond the minimum needed.
    pub spare_batches: usize,
}

impl Default for LlmGenerateConfig {
    fn default() -> Self {
        Self { batch_size: 10, spare_batches: 10 }
    }
}

/// Direct end-to-end prompting in batches; invalid profiles are dropped and
/// replaced by later batches.
pub fn llm_generate(
    model: &WorldModel,
    topic: &str,
    n: usize,
    schema: &DimensionSchema,
    params: &ProviderParams,
    config: &LlmGenerateConfig,
    seed: u64,
) -> Result<Population, BaselineError> {
    if n == 0 {
        return Err(BaselineError::InvalidSize);
    }
    let batch_size = config.batch_size.max(1);
    let budget = n.div_ceil(batch_size) + config.spare_batches;
    let mut members: Vec<PersonaRecord> = Vec::with_capacity(n);
    let mut dropped = 0;
    let mut batches = 0;
    while members.len() < n {
        if batches == budget {
            return Err(BaselineError::GenerationBudgetExceeded { batches, produced: members.len(), requested: n });
        }
        let want = batch_size.min(n - members.len());
        let (records, bad) = model.generate_batch(topic, schema, want, batches, params)?;
        dropped += bad;
        members.extend(records.into_iter().take(n - members.len()));
        batches += 1;
    }
    let mut meta = meta(Method::LlmGenerate, seed);
    meta.provider = Some(model.fingerprint());
    meta.extra.insert("batches".into(), json!(batches));
    meta.extra.insert("dropped".into(), json!(dropped));
    Ok(Population::new(topic, members, meta))
}

/// Settings shared by the two tree-based generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HagConfig {
    pub params: ProviderParams,
    pub min_path_prob: f64,
    pub grounding: GroundingConfig,
}

impl Default for HagConfig {
    fn default() -> Self {
        Self { params: ProviderParams::default(), min_path_prob: 0.0, grounding: GroundingConfig::default() }
    }
}

#[allow(clippy::too_many_arguments)]
fn ground(
    tree: &DistributionTree,
    db: &PersonaDatabase,
    n: usize,
    provider: &dyn KnowledgeProvider,
    schema: &DimensionSchema,
    config: &HagConfig,
    seed: u64,
    method: Method,
) -> Result<Population, BaselineError> {
    let tree = tree.prune(config.min_path_prob)?;
    let grounding = GroundingConfig { generator: method.name().into(), ..config.grounding.clone() };
    Ok(instantiate(&tree, db, n, provider, schema, &config.params, seed, &grounding)?)
}

/// Full pipeline: build the conditional tree, then ground it.
pub fn hag(
    provider: &dyn KnowledgeProvider,
    topic: &str,
    n: usize,
    schema: &DimensionSchema,
    db: &PersonaDatabase,
    config: &HagConfig,
    seed: u64,
) -> Result<(DistributionTree, Population), BaselineError> {
    if n == 0 {
        return Err(BaselineError::InvalidSize);
    }
    let tree = build_tree(topic, schema, provider, &config.params)?;
    let pop = ground(&tree, db, n, provider, schema, config, seed, Method::Hag)?;
    Ok((tree, pop))
}

/// Tree whose layers are topic-only marginals: one request per prioritized
/// dimension, all with an empty context.
pub fn flat_tree(
    provider: &dyn KnowledgeProvider,
    topic: &str,
    schema: &DimensionSchema,
    params: &ProviderParams,
) -> Result<DistributionTree, BaselineError> {
    let seq = provider.prioritize_dims(topic, schema, params)?;
    let mut marginals = Vec::with_capacity(seq.len());
    for id in seq.iter().take(params.max_depth) {
        let dim = schema.get(id).ok_or_else(|| TreeError::UnknownDimension(id.clone()))?;
        let values =
            provider.infer_conditional(topic, dim, &PersonaVector::new(), params, dim.vocabulary.as_deref())?;
        marginals.push((id.clone(), values.into_iter().map(|v| (v.label, v.weight)).collect()));
    }
    let meta = TreeMeta {
        provider: provider.fingerprint(),
        params: params.clone(),
        builder: Method::HagFlat.name().into(),
        ..Default::default()
    };
    Ok(DistributionTree::outer_product(topic, &marginals, meta))
}

/// Flat ablation: independent marginals, grounded exactly like HAG.
pub fn hag_flat(
    provider: &dyn KnowledgeProvider,
    topic: &str,
    n: usize,
    schema: &DimensionSchema,
    db: &PersonaDatabase,
    config: &HagConfig,
    seed: u64,
) -> Result<(DistributionTree, Population), BaselineError> {
    if n == 0 {
        return Err(BaselineError::InvalidSize);
    }
    let tree = flat_tree(provider, topic, schema, &config.params)?;
    let pop = ground(&tree, db, n, provider, schema, config, seed, Method::HagFlat)?;
    Ok((tree, pop))
}
