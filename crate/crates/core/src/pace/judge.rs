//! Model-as-judge scoring of archetypes and individual personas.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::kmeans::Archetype;
use super::PaceError;
use crate::persona::{DimensionSchema, PersonaRecord, Population};
use crate::provider::chat::{LlmClient, Task};
use crate::provider::parse::parse_structured;
use crate::provider::{prompts, ProviderError};

pub const ARCHETYPE_KEY: &str = "archetype_coherence_score";
pub const INDIVIDUAL_KEY: &str = "internal_consistency_score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub score: u8,
    pub reasoning: String,
}

/// Reads an integer score in 1..=5 from `key`.
pub fn parse_score(raw: &str, key: &str) -> Result<JudgeScore, ProviderError> {
    let value = parse_structured(raw).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
    let score = match value.get(key) {
        Some(Value::Number(n)) => n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64),
        Some(Value::String(s)) => s.trim().parse::<i64>().ok(),
        _ => None,
    }
    .ok_or_else(|| ProviderError::MalformedResponse(format!("`{key}` must be an integer from 1 to 5")))?;
    if !(1..=5).contains(&score) {
        return Err(ProviderError::MalformedResponse(format!("`{key}` is {score}; it must be between 1 and 5")));
    }
    let reasoning = value.get("reasoning").and_then(Value::as_str).unwrap_or_default().to_string();
    Ok(JudgeScore { score: score as u8, reasoning })
}

fn judged(result: Result<JudgeScore, ProviderError>) -> Result<JudgeScore, PaceError> {
    result.map_err(|e| match e {
        ProviderError::MalformedResponse(m) => PaceError::MalformedJudgeResponse(m),
        other => PaceError::Judge(other),
    })
}

/// Profile keyed by display names, as shown to the judge.
pub fn display_profile(record: &PersonaRecord, schema: &DimensionSchema) -> BTreeMap<String, String> {
    schema
        .dimensions
        .iter()
        .filter_map(|d| record.get(&d.id).map(|l| (d.name.clone(), l.to_string())))
        .collect()
}

/// One joint judgment over all dominant clusters.
pub fn judge_archetypes(
    client: &LlmClient,
    topic: &str,
    archetypes: &[Archetype],
    schema: &DimensionSchema,
) -> Result<JudgeScore, PaceError> {
    let snippet: Vec<String> = archetypes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let profile = serde_json::to_string(&display_profile(&a.representative, schema)).expect("profile serializes");
            format!("Cluster {} (share {:.1}%): {profile}", i + 1, a.share * 100.0)
        })
        .collect();
    let prompt = prompts::judge_archetypes(&snippet.join("\n"), topic);
    let task = Task::JudgeArchetypes { topic: topic.to_string(), clusters: archetypes.len() };
    judged(client.ask(task, prompt, |raw| parse_score(raw, ARCHETYPE_KEY)))
}

pub fn judge_individual(
    client: &LlmClient,
    topic: &str,
    record: &PersonaRecord,
    schema: &DimensionSchema,
) -> Result<JudgeScore, PaceError> {
    let profile = display_profile(record, schema);
    let prompt = prompts::judge_individual(topic, &serde_json::to_string_pretty(&profile).expect("profile serializes"));
    let task = Task::JudgeIndividual { topic: topic.to_string(), profile };
    judged(client.ask(task, prompt, |raw| parse_score(raw, INDIVIDUAL_KEY)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualConsistency {
    pub mean: f64,
    /// Population positions of the judged members, ascending.
    pub sampled: Vec<usize>,
    pub scores: Vec<u8>,
    pub reasoning: Vec<String>,
}

/// Judges a seeded sample of `n` members and averages their scores.
pub fn individual_consistency(
    client: &LlmClient,
    pop: &Population,
    schema: &DimensionSchema,
    n: usize,
    seed: u64,
) -> Result<IndividualConsistency, PaceError> {
    if pop.is_empty() || n == 0 {
        return Err(PaceError::EmptyPopulation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled = sample(&mut rng, pop.size(), n.min(pop.size())).into_vec();
    sampled.sort_unstable();
    let results: Vec<Result<JudgeScore, PaceError>> =
        sampled.par_iter().map(|&i| judge_individual(client, &pop.topic, &pop.members[i], schema)).collect();
    let results: Vec<JudgeScore> = results.into_iter().collect::<Result<_, _>>()?;
    let scores: Vec<u8> = results.iter().map(|r| r.score).collect();
    let mean = scores.iter().map(|s| *s as f64).sum::<f64>() / scores.len() as f64;
    Ok(IndividualConsistency { mean, sampled, scores, reasoning: results.into_iter().map(|r| r.reasoning).collect() })
}
