//! Grounded instantiation: turn tree leaves into a population of real
//! records, augmenting leaves the database cannot cover.

pub mod database;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use database::{Harmonization, IngestReport, PersonaDatabase};

use crate::persona::{DimensionSchema, PersonaRecord, PersonaVector, Population, PopulationMeta, Provenance};
use crate::provider::{KnowledgeProvider, ProviderError, ProviderParams};
use crate::tree::{DistributionTree, LeafPersona};

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("cannot read persona source: {0}")]
    UnreadableSource(String),
    #[error("source lacks mapped columns: {}", .0.join(", "))]
    ColumnMapIncomplete(Vec<String>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid database record: {0}")]
    InvalidRecord(String),
    #[error("population size must be at least 1")]
    InvalidSize,
    #[error("tree has no leaves")]
    EmptyTree,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("could not augment leaf [{persona}]: {reason}")]
    AugmentationExhausted { persona: PersonaVector, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CoverageTag {
    Hit,
    Miss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafAllocation {
    pub persona: PersonaVector,
    pub path_prob: f64,
    /// n(v)
    pub target: usize,
    /// m(v)
    pub available: usize,
    pub tag: CoverageTag,
    pub sampled_ids: Vec<String>,
    pub augment_gap: usize,
}

/// Largest-remainder apportionment of `n` seats over the leaves.
///
/// Weights are normalized first. Remainder ties go to the larger weight, then
/// to the lexicographically smaller persona.
pub fn allocate_counts(leaves: &[LeafPersona], n: usize) -> Vec<usize> {
    if leaves.is_empty() {
        return Vec::new();
    }
    let total: f64 = leaves.iter().map(|l| l.path_prob).sum();
    let quotas: Vec<f64> = leaves.iter().map(|l| n as f64 * l.path_prob / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..leaves.len()).collect();
    let labels: Vec<Vec<&str>> = leaves.iter().map(|l| l.persona.labels()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra)
            .then_with(|| leaves[b].path_prob.total_cmp(&leaves[a].path_prob))
            .then_with(|| labels[a].cmp(&labels[b]))
    });
    match assigned.cmp(&n) {
        Ordering::Less => {
            for &i in order.iter().cycle().take(n - assigned) {
                counts[i] += 1;
            }
        }
        Ordering::Greater => {
            // only reachable through floating-point excess; trim the smallest remainders
            let mut excess = assigned - n;
            for &i in order.iter().rev() {
                if excess == 0 {
                    break;
                }
                if counts[i] > 0 {
                    counts[i] -= 1;
                    excess -= 1;
                }
            }
        }
        Ordering::Equal => {}
    }
    counts
}

/// Seeded uniform sample without replacement of up to `limit` records that
/// match `persona` exactly.
pub fn retrieve(db: &PersonaDatabase, persona: &PersonaVector, limit: usize, seed: u64) -> Vec<PersonaRecord> {
    let mut rng = leaf_rng(seed, persona);
    sample_matching(db, persona, limit, &mut rng).into_iter().map(|i| db.records()[i].clone()).collect()
}

fn sample_matching(db: &PersonaDatabase, persona: &PersonaVector, limit: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut ids = db.matching(persona);
    ids.shuffle(rng);
    ids.truncate(limit);
    ids
}

/// Per-leaf random stream, independent of scheduling order.
fn leaf_rng(seed: u64, persona: &PersonaVector) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(persona.to_string().as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingConfig {
    /// Attempts per augmented record before giving up on a leaf.
    pub augment_attempts: usize,
    /// Name written into the population's generator field.
    pub generator: String,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self { augment_attempts: 3, generator: "hag".into() }
    }
}

/// Fills every leaf with its allotted share of `n`: matching real records
/// first, then constrained augmentation for the deficit.
#[allow(clippy::too_many_arguments)]
pub fn instantiate(
    tree: &DistributionTree,
    db: &PersonaDatabase,
    n: usize,
    provider: &dyn KnowledgeProvider,
    schema: &DimensionSchema,
    params: &ProviderParams,
    seed: u64,
    config: &GroundingConfig,
) -> Result<Population, GroundingError> {
    if n == 0 {
        return Err(GroundingError::InvalidSize);
    }
    let leaves = tree.enumerate_leaves();
    if leaves.is_empty() {
        return Err(GroundingError::EmptyTree);
    }
    let counts = allocate_counts(&leaves, n);
    let filled: Vec<Result<(LeafAllocation, Vec<PersonaRecord>), GroundingError>> = leaves
        .par_iter()
        .zip(counts.par_iter())
        .map(|(leaf, &target)| fill_leaf(tree, db, leaf, target, provider, schema, params, seed, config))
        .collect();
    let mut members = Vec::with_capacity(n);
    let mut allocations = Vec::with_capacity(leaves.len());
    for result in filled {
        let (allocation, records) = result?;
        members.extend(records);
        allocations.push(allocation);
    }
    let mut meta = PopulationMeta {
        generator: config.generator.clone(),
        seed,
        tree: Some(tree_digest(tree)),
        provider: Some(provider.fingerprint()),
        ..Default::default()
    };
    let hits = allocations.iter().filter(|a| a.tag == CoverageTag::Hit).count();
    meta.extra.insert("leaves".into(), serde_json::json!(allocations.len()));
    meta.extra.insert("hit_leaves".into(), serde_json::json!(hits));
    meta.extra.insert("allocation".into(), serde_json::to_value(&allocations).expect("allocations serialize"));
    Ok(Population::new(tree.topic.clone(), members, meta))
}

/// Short content hash identifying the tree a population was drawn from.
pub fn tree_digest(tree: &DistributionTree) -> String {
    hex::encode(&Sha256::digest(tree.to_json().as_bytes())[..8])
}

#[allow(clippy::too_many_arguments)]
fn fill_leaf(
    tree: &DistributionTree,
    db: &PersonaDatabase,
    leaf: &LeafPersona,
    target: usize,
    provider: &dyn KnowledgeProvider,
    schema: &DimensionSchema,
    params: &ProviderParams,
    seed: u64,
    config: &GroundingConfig,
) -> Result<(LeafAllocation, Vec<PersonaRecord>), GroundingError> {
    let mut rng = leaf_rng(seed, &leaf.persona);
    let available = db.count_matching(&leaf.persona);
    let sampled = sample_matching(db, &leaf.persona, target, &mut rng);
    let mut records: Vec<PersonaRecord> = sampled.iter().map(|&i| db.records()[i].clone()).collect();
    let gap = target - records.len();
    for k in 0..gap {
        records.push(augment(tree, db, leaf, k, gap, provider, schema, params, &mut rng, config)?);
    }
    let allocation = LeafAllocation {
        persona: leaf.persona.clone(),
        path_prob: leaf.path_prob,
        target,
        available,
        tag: if available >= target { CoverageTag::Hit } else { CoverageTag::Miss },
        sampled_ids: records.iter().take(sampled.len()).filter_map(|r| r.source_id.clone()).collect(),
        augment_gap: gap,
    };
    Ok((allocation, records))
}

#[allow(clippy::too_many_arguments)]
fn augment(
    tree: &DistributionTree,
    db: &PersonaDatabase,
    leaf: &LeafPersona,
    k: usize,
    gap: usize,
    provider: &dyn KnowledgeProvider,
    schema: &DimensionSchema,
    params: &ProviderParams,
    rng: &mut ChaCha8Rng,
    config: &GroundingConfig,
) -> Result<PersonaRecord, GroundingError> {
    if !provider.can_generate() {
        return resample_prefix(db, &leaf.persona, rng);
    }
    let mut last = String::new();
    for attempt in 0..config.augment_attempts.max(1) {
        match provider.generate_persona(&tree.topic, &leaf.persona, schema, params, k + attempt * gap) {
            Ok(record) if record.matches(&leaf.persona) && crate::persona::validate_record(&record, schema).is_empty() => {
                return Ok(record);
            }
            Ok(_) => last = "generated record breaks the leaf constraints".into(),
            Err(e @ (ProviderError::Unreachable(_) | ProviderError::Offline | ProviderError::InvalidRequest(_))) => {
                return Err(e.into());
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(GroundingError::AugmentationExhausted { persona: leaf.persona.clone(), reason: last })
}

/// Copies a record matching the longest satisfiable prefix of the leaf path
/// and overwrites the constrained dimensions with the leaf's values.
fn resample_prefix(db: &PersonaDatabase, persona: &PersonaVector, rng: &mut ChaCha8Rng) -> Result<PersonaRecord, GroundingError> {
    for len in (0..persona.len()).rev() {
        let ids = db.matching(&persona.prefix(len));
        if ids.is_empty() {
            continue;
        }
        let base = &db.records()[ids[rng.random_range(0..ids.len())]];
        let mut values: BTreeMap<String, String> = base.values.clone();
        for a in persona {
            values.insert(a.dimension_id.clone(), a.label.clone());
        }
        return Ok(PersonaRecord::new(values, Provenance::Augmented, None));
    }
    Err(GroundingError::AugmentationExhausted {
        persona: persona.clone(),
        reason: "database is empty and the provider cannot generate".into(),
    })
}
