//! Deterministic offline backend.
//!
//! Answers come from a configurable [`MockTable`] where an entry exists, and
//! otherwise from a seeded hash of the request, so identical requests always
//! receive identical answers.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::chat::{BackendError, ChatBackend, ChatRequest, FillSlot, Task};
use super::WeightedValue;
use crate::persona::{dims, PersonaVector, UNKNOWN};

/// Conditional distribution served for `dimension` when the request context
/// contains every assignment in `context`. The most specific match wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRule {
    /// Topic this rule applies to; `"*"` matches any topic.
    pub topic: String,
    pub dimension: String,
    #[serde(default)]
    pub context: BTreeMap<String, String>,
    pub values: Vec<WeightedValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockTable {
    /// topic -> prioritized dimension names or ids
    #[serde(default)]
    pub prioritize: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub conditionals: Vec<ConditionalRule>,
    /// Preferred filler label per dimension id for constrained generation.
    #[serde(default)]
    pub defaults: BTreeMap<String, String>,
    /// Corpus user id -> (dimension id -> label) for text-to-persona inference.
    #[serde(default)]
    pub personas: BTreeMap<String, BTreeMap<String, String>>,
    /// Fixed judge score; hash-derived in 3..=5 when absent.
    #[serde(default)]
    pub judge_score: Option<i64>,
    /// When set, text-to-persona requests for users missing from `personas`
    /// are answered with `Unknown` everywhere.
    #[serde(default)]
    pub honest: bool,
}

impl MockTable {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn with_rule(mut self, topic: &str, dimension: &str, context: &[(&str, &str)], values: &[(&str, f64)]) -> Self {
        self.conditionals.push(ConditionalRule {
            topic: topic.to_string(),
            dimension: dimension.to_string(),
            context: context.iter().map(|(d, l)| (d.to_string(), l.to_string())).collect(),
            values: values.iter().map(|(l, w)| WeightedValue::new(*l, *w)).collect(),
        });
        self
    }

    pub fn with_priorities(mut self, topic: &str, dims: &[&str]) -> Self {
        self.prioritize.insert(topic.to_string(), dims.iter().map(|d| d.to_string()).collect());
        self
    }

    fn rule_for(&self, topic: &str, dimension: &str, context: &PersonaVector) -> Option<&ConditionalRule> {
        self.conditionals
            .iter()
            .filter(|r| (r.topic == topic || r.topic == "*") && r.dimension == dimension)
            .filter(|r| r.context.iter().all(|(d, l)| context.get(d) == Some(l.as_str())))
            .fold(None, |best: Option<&ConditionalRule>, r| {
                let key = |x: &ConditionalRule| (x.context.len(), x.topic != "*");
                match best {
                    Some(b) if key(b) >= key(r) => Some(b),
                    _ => Some(r),
                }
            })
    }
}

/// Value pools for open dimensions when no table entry applies.
fn open_pool(dimension: &str) -> Vec<String> {
    let pool: &[&str] = match dimension {
        dims::COUNTRY => &["United States", "India", "Germany", "Brazil", "United Kingdom", "Japan", "Nigeria"],
        dims::LANGUAGE => &["English", "Spanish", "Hindi", "German", "Portuguese"],
        dims::OCCUPATION => &["Professional", "Clerical", "Sales", "Service", "Skilled worker", "Higher administrative"],
        dims::ETHNICITY => &["White", "Black", "Asian", "Hispanic", "Mixed"],
        _ => &["Type A", "Type B", "Type C", "Type D"],
    };
    pool.iter().map(|s| s.to_string()).collect()
}

fn slot_pool(slot: &FillSlot) -> Vec<String> {
    slot.allowed.clone().unwrap_or_else(|| open_pool(&slot.dimension))
}

pub struct MockBackend {
    table: MockTable,
    seed: u64,
    calls: AtomicUsize,
    by_kind: Mutex<BTreeMap<&'static str, usize>>,
}

impl MockBackend {
    pub fn new(table: MockTable, seed: u64) -> Self {
        Self { table, seed, calls: AtomicUsize::new(0), by_kind: Mutex::default() }
    }

    pub fn table(&self) -> &MockTable {
        &self.table
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn calls_of(&self, kind: &str) -> usize {
        self.by_kind.lock().unwrap().get(kind).copied().unwrap_or(0)
    }

    fn rng_for(&self, request: &ChatRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(serde_json::to_string(&request.task).expect("task serializes").as_bytes());
        // repairs see a fresh draw
        h.update((request.attempt() as u64).to_le_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn answer(&self, request: &ChatRequest) -> Value {
        let mut rng = self.rng_for(request);
        match &request.task {
            Task::PrioritizeDims { topic, candidates, max_depth } => {
                if let Some(dims) = self.table.prioritize.get(topic) {
                    return json!({ "dimensions": dims });
                }
                let mut pool = candidates.clone();
                pool.shuffle(&mut rng);
                let n = rng.random_range(1..=(*max_depth).clamp(1, pool.len().max(1)));
                pool.truncate(n);
                json!({ "dimensions": pool })
            }
            Task::InferConditional { topic, dimension, context, max_branches, allowed, .. } => {
                if let Some(rule) = self.table.rule_for(topic, dimension, context) {
                    let dist: Vec<Value> =
                        rule.values.iter().map(|v| json!({"value": v.label, "probability": v.weight})).collect();
                    return json!({ "distribution": dist });
                }
                let mut pool = allowed.clone().unwrap_or_else(|| open_pool(dimension));
                pool.shuffle(&mut rng);
                let n = rng.random_range(1..=(*max_branches).clamp(1, pool.len()));
                pool.truncate(n);
                let raw: Vec<f64> = pool.iter().map(|_| rng.random_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                let dist: Vec<Value> = pool
                    .iter()
                    .zip(&raw)
                    .map(|(label, w)| json!({"value": label, "probability": w / total}))
                    .collect();
                json!({ "distribution": dist })
            }
            Task::GeneratePersona { fixed, fill, .. } => {
                let mut profile = serde_json::Map::new();
                for a in fixed {
                    profile.insert(a.dimension_id.clone(), json!(a.label));
                }
                for slot in fill {
                    profile.insert(slot.name.clone(), json!(self.fill_value(slot, &mut rng)));
                }
                json!({ "profile": profile })
            }
            Task::GenerateBatch { count, fill, .. } => {
                let personas: Vec<Value> = (0..*count)
                    .map(|_| {
                        let p: serde_json::Map<String, Value> = fill
                            .iter()
                            .map(|s| {
                                let pool = slot_pool(s);
                                (s.name.clone(), json!(pool[rng.random_range(0..pool.len())]))
                            })
                            .collect();
                        Value::Object(p)
                    })
                    .collect();
                json!({ "personas": personas })
            }
            Task::InferFromText { user_id, fill, .. } => {
                let known = self.table.personas.get(user_id);
                let p: serde_json::Map<String, Value> = fill
                    .iter()
                    .map(|s| {
                        let label = match known {
                            Some(map) => map.get(&s.dimension).cloned().unwrap_or_else(|| UNKNOWN.to_string()),
                            None if self.table.honest => UNKNOWN.to_string(),
                            None => {
                                let pool = slot_pool(s);
                                pool[rng.random_range(0..pool.len())].clone()
                            }
                        };
                        (s.name.clone(), json!(label))
                    })
                    .collect();
                Value::Object(p)
            }
            Task::JudgeArchetypes { .. } => {
                let score = self.table.judge_score.unwrap_or_else(|| rng.random_range(3..=5));
                json!({ "archetype_coherence_score": score, "reasoning": "mock judgment" })
            }
            Task::JudgeIndividual { .. } => {
                let score = self.table.judge_score.unwrap_or_else(|| rng.random_range(3..=5));
                json!({ "internal_consistency_score": score, "reasoning": "mock judgment" })
            }
        }
    }

    fn fill_value(&self, slot: &FillSlot, rng: &mut ChaCha8Rng) -> String {
        if let Some(label) = self.table.defaults.get(&slot.dimension) {
            let ok = slot.allowed.as_ref().is_none_or(|a| a.contains(label));
            if ok {
                return label.clone();
            }
        }
        let pool = slot_pool(slot);
        pool[rng.random_range(0..pool.len())].clone()
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        *self.by_kind.lock().unwrap().entry(request.task.kind()).or_insert(0) += 1;
        Ok(self.answer(request).to_string())
    }

    fn fingerprint(&self) -> String {
        format!("mock(seed={})", self.seed)
    }
}
