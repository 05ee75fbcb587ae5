//! Population alignment and consistency evaluation.

pub mod divergence;
pub mod judge;
pub mod kmeans;
pub mod sampling;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use divergence::{
    diversity_error, dist_fidelity, gini_simpson, jsd, joint_distribution, kl, DimensionScores, Metric, DEFAULT_EPSILON,
};
pub use kmeans::{archetype_centroids, Archetype};
pub use sampling::{adaptive_sample_size, SamplingPlan};

use crate::embed::{EmbedError, Embedder};
use crate::persona::{label_counts, DimensionSchema, Distribution, Population, Provenance, FORMAT_VERSION};
use crate::provider::chat::LlmClient;
use crate::provider::ProviderError;

#[derive(Debug, Error)]
pub enum PaceError {
    #[error("distributions describe different dimensions (`{0}` vs `{1}`)")]
    DimensionMismatch(String, String),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("no dimension has known values on both sides")]
    NoEvaluableDimensions,
    #[error("population of {size} cannot form {k} clusters")]
    PopulationTooSmall { size: usize, k: usize },
    #[error(transparent)]
    Embedder(#[from] EmbedError),
    #[error("judge failed: {0}")]
    Judge(ProviderError),
    #[error("judge response unusable: {0}")]
    MalformedJudgeResponse(String),
    #[error("unsupported report format_version {0}")]
    FormatVersionMismatch(u32),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub epsilon: f64,
    /// Number of archetype clusters.
    pub k: usize,
    pub z: f64,
    pub sigma: f64,
    pub margin: f64,
    pub seed: u64,
    /// Skip every judge call.
    pub offline: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, k: 4, z: 1.96, sigma: 1.0, margin: 0.2, seed: 0, offline: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub share: f64,
    pub size: usize,
    pub profile: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeRelevance {
    pub score: u8,
    pub reasoning: String,
    pub clusters: Vec<ClusterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub topic: String,
    pub generator: String,
    pub reference: String,
    /// Provider fingerprint recorded on the generated population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    pub gen_size: usize,
    pub gt_size: usize,
    pub dimensions: Vec<String>,
    pub excluded: Vec<String>,
    pub jsd: BTreeMap<String, f64>,
    pub kl: BTreeMap<String, f64>,
    pub s_dist_jsd: f64,
    pub s_dist_kl: f64,
    pub gini_gen: BTreeMap<String, f64>,
    pub gini_gt: BTreeMap<String, f64>,
    pub div_err: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch_rel: Option<ArchetypeRelevance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ind_con: Option<judge::IndividualConsistency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_transcript: Option<String>,
    pub config: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    format_version: u32,
    kind: String,
    #[serde(flatten)]
    report: EvalReport,
}

impl EvalReport {
    pub const KIND: &'static str = "report";

    pub fn to_json(&self) -> String {
        let file = ReportFile { format_version: FORMAT_VERSION, kind: Self::KIND.into(), report: self.clone() };
        serde_json::to_string_pretty(&file).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PaceError> {
        let file: ReportFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(PaceError::FormatVersionMismatch(file.format_version));
        }
        Ok(file.report)
    }

    pub fn save(&self, path: &Path) -> Result<(), PaceError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PaceError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Model and embedder used for the consistency metrics.
pub struct Judges<'a> {
    pub client: LlmClient,
    pub embedder: &'a dyn Embedder,
}

/// Full metric bundle for `gen` against the reference `gt`. Judge metrics are
/// skipped when `judges` is absent or the config is offline; a judge failure
/// leaves them absent and records the error.
pub fn evaluate(
    gen: &Population,
    gt: &Population,
    schema: &DimensionSchema,
    config: &EvalConfig,
    judges: Option<&Judges>,
) -> Result<EvalReport, PaceError> {
    let js = dist_fidelity(gen, gt, schema, Metric::Jsd, config.epsilon)?;
    let kls = dist_fidelity(gen, gt, schema, Metric::Kl, config.epsilon)?;
    let div = diversity_error(gen, gt, schema)?;
    let gini = |pop: &Population| -> BTreeMap<String, f64> {
        js.per_dimension
            .keys()
            .filter_map(|d| Distribution::from_counts(d.as_str(), &label_counts(pop, d)).ok().map(|p| (d.clone(), gini_simpson(&p))))
            .collect()
    };
    let mut report = EvalReport {
        topic: gen.topic.clone(),
        generator: gen.meta.generator.clone(),
        reference: gt.meta.generator.clone(),
        provider: gen.meta.provider.clone(),
        gen_size: gen.size(),
        gt_size: gt.size(),
        dimensions: js.per_dimension.keys().cloned().collect(),
        excluded: js.excluded.clone(),
        jsd: js.per_dimension.clone(),
        kl: kls.per_dimension,
        s_dist_jsd: js.mean,
        s_dist_kl: kls.mean,
        gini_gen: gini(gen),
        gini_gt: gini(gt),
        div_err: div.mean,
        arch_rel: None,
        ind_con: None,
        sampling: None,
        judge: None,
        judge_error: None,
        judge_transcript: None,
        config: config.clone(),
        run_config: None,
    };
    if let (Some(j), false) = (judges, config.offline) {
        report.judge = Some(format!("{} / {}", j.client.fingerprint(), j.embedder.fingerprint()));
        if let Err(e) = consistency(gen, schema, config, j, &mut report) {
            report.judge_error = Some(e.to_string());
        }
    }
    Ok(report)
}

fn consistency(
    gen: &Population,
    schema: &DimensionSchema,
    config: &EvalConfig,
    j: &Judges,
    report: &mut EvalReport,
) -> Result<(), PaceError> {
    let k = config.k.min(gen.size());
    let archetypes = archetype_centroids(gen, j.embedder, k, config.seed)?;
    let verdict = judge::judge_archetypes(&j.client, &gen.topic, &archetypes, schema)?;
    report.arch_rel = Some(ArchetypeRelevance {
        score: verdict.score,
        reasoning: verdict.reasoning,
        clusters: archetypes
            .iter()
            .map(|a| ClusterSummary {
                share: a.share,
                size: a.size,
                profile: judge::display_profile(&a.representative, schema),
            })
            .collect(),
    });
    let plan = SamplingPlan::new(gen.size(), config.z, config.sigma, config.margin);
    report.ind_con = Some(judge::individual_consistency(&j.client, gen, schema, plan.n, config.seed)?);
    report.sampling = Some(plan);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub provenance: Provenance,
    pub vector: Vec<f32>,
}

/// One row per member: its source id (or `member-<i>`) and rendered-text embedding.
pub fn export_embeddings(pop: &Population, embedder: &dyn Embedder) -> Result<Vec<EmbeddingRow>, PaceError> {
    let texts: Vec<String> = pop.members.iter().map(|m| m.render_text()).collect();
    let vectors = embedder.embed_documents(&texts)?;
    Ok(pop
        .members
        .iter()
        .zip(vectors)
        .enumerate()
        .map(|(i, (m, vector))| EmbeddingRow {
            id: m.source_id.clone().unwrap_or_else(|| format!("member-{i}")),
            provenance: m.provenance,
            vector,
        })
        .collect())
}

pub fn write_embeddings_jsonl(rows: &[EmbeddingRow], out: &mut impl Write) -> std::io::Result<()> {
    for row in rows {
        writeln!(out, "{}", serde_json::to_string(row).expect("row serializes"))?;
    }
    Ok(())
}
