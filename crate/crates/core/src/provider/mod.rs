//! The world knowledge model: dimension prioritization, conditional value
//! distributions and path-constrained persona generation.

pub mod chat;
pub mod http;
pub mod mock;
pub mod parse;
pub mod prompts;
pub mod transcript;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::persona::{AttributeValue, Dimension, DimensionSchema, PersonaRecord, PersonaVector, Provenance, UNKNOWN};
use chat::{FillSlot, LlmClient, Task};
use parse::parse_structured;

pub use chat::{BackendError, ChatBackend, ChatRequest, FnBackend, ScriptedBackend};
pub use mock::{MockBackend, MockTable};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("network access is disabled (offline mode)")]
    Offline,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("response names unknown dimension `{0}`")]
    UnknownDimensionInResponse(String),
    #[error("response contains no usable values")]
    EmptyDistribution,
    #[error("value `{label}` is not allowed for `{dimension}`")]
    DisallowedValue { dimension: String, label: String },
    #[error("response sets `{dimension}` to `{found}` but the constraint requires `{expected}`")]
    ConstraintViolatedInResponse { dimension: String, expected: String, found: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedValue {
    #[serde(rename = "value")]
    pub label: String,
    #[serde(rename = "probability")]
    pub weight: f64,
}

impl WeightedValue {
    pub fn new(label: impl Into<String>, weight: f64) -> Self {
        Self { label: label.into(), weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderParams {
    /// Most prioritized dimensions kept (tree depth).
    pub max_depth: usize,
    /// Most values per conditional distribution (tree branching).
    pub max_branches: usize,
    pub temperature: f64,
    pub retries: u32,
}

impl Default for ProviderParams {
    fn default() -> Self {
        Self { max_depth: 5, max_branches: 5, temperature: 0.0, retries: 3 }
    }
}

impl ProviderParams {
    pub fn check(&self) -> Result<(), ProviderError> {
        if self.max_depth == 0 || self.max_branches == 0 {
            return Err(ProviderError::InvalidRequest("max_depth and max_branches must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sums inside this band are renormalized silently; outside it the model is
/// asked again.
pub const WEIGHT_SUM_BAND: (f64, f64) = (0.9, 1.1);

/// Divides weights by their sum. Rejects negative or non-finite weights and
/// sums outside [`WEIGHT_SUM_BAND`].
pub fn normalize_weights(values: &[WeightedValue]) -> Result<Vec<WeightedValue>, ProviderError> {
    if values.is_empty() {
        return Err(ProviderError::EmptyDistribution);
    }
    if let Some(v) = values.iter().find(|v| !v.weight.is_finite() || v.weight < 0.0) {
        return Err(ProviderError::MalformedResponse(format!("invalid probability {} for `{}`", v.weight, v.label)));
    }
    let total: f64 = values.iter().map(|v| v.weight).sum();
    if total <= 0.0 {
        return Err(ProviderError::EmptyDistribution);
    }
    if total < WEIGHT_SUM_BAND.0 || total > WEIGHT_SUM_BAND.1 {
        return Err(ProviderError::MalformedResponse(format!(
            "probabilities sum to {total}; they must sum to exactly 1.0"
        )));
    }
    Ok(values.iter().map(|v| WeightedValue::new(v.label.clone(), v.weight / total)).collect())
}

/// Capabilities a world knowledge model offers to the tree builder and the
/// grounding stage. Implementations must tolerate concurrent calls.
pub trait KnowledgeProvider: Send + Sync {
    fn fingerprint(&self) -> String;

    /// Topic-relevant dimension ids, most influential first.
    fn prioritize_dims(
        &self,
        topic: &str,
        schema: &DimensionSchema,
        params: &ProviderParams,
    ) -> Result<Vec<String>, ProviderError>;

    /// Normalized distribution over values of `dimension` given the ancestor path.
    fn infer_conditional(
        &self,
        topic: &str,
        dimension: &Dimension,
        context: &PersonaVector,
        params: &ProviderParams,
        allowed: Option<&[String]>,
    ) -> Result<Vec<WeightedValue>, ProviderError>;

    /// A complete augmented record honoring every `fixed` assignment.
    /// `variant` distinguishes repeated requests for the same path.
    fn generate_persona(
        &self,
        topic: &str,
        fixed: &PersonaVector,
        schema: &DimensionSchema,
        params: &ProviderParams,
        variant: usize,
    ) -> Result<PersonaRecord, ProviderError>;

    /// Whether [`generate_persona`](Self::generate_persona) is available.
    fn can_generate(&self) -> bool {
        true
    }
}

/// Language-model-backed [`KnowledgeProvider`].
#[derive(Clone)]
pub struct WorldModel {
    client: LlmClient,
}

impl WorldModel {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self { client: LlmClient::new(backend) }
    }

    pub fn from_client(client: LlmClient) -> Self {
        Self { client }
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    fn client_for(&self, params: &ProviderParams) -> LlmClient {
        self.client.clone().with_temperature(params.temperature).with_retries(params.retries)
    }

    /// End-to-end generation of up to `count` personas in one request.
    /// Profiles that fail validation are dropped; the second value counts them.
    pub fn generate_batch(
        &self,
        topic: &str,
        schema: &DimensionSchema,
        count: usize,
        batch: usize,
        params: &ProviderParams,
    ) -> Result<(Vec<PersonaRecord>, usize), ProviderError> {
        let fill = fill_slots(&schema.dimensions);
        let prompt = prompts::generate_batch(topic, &fill, count, batch);
        let task = Task::GenerateBatch { topic: topic.to_string(), count, batch, fill };
        self.client_for(params).ask(task, prompt, |raw| {
            let value = parse_structured(raw).map_err(malformed)?;
            let items = value
                .get("personas")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("expected a `personas` array"))?;
            let mut records = Vec::new();
            let mut dropped = 0;
            for item in items {
                let parsed = item.as_object().and_then(|profile| {
                    schema
                        .dimensions
                        .iter()
                        .map(|d| concrete_label(profile, d).ok().map(|l| (d.id.clone(), l)))
                        .collect::<Option<BTreeMap<_, _>>>()
                });
                match parsed {
                    Some(values) => records.push(PersonaRecord::new(values, Provenance::Augmented, None)),
                    None => dropped += 1,
                }
            }
            Ok((records, dropped))
        })
    }
}

fn malformed(e: impl std::fmt::Display) -> ProviderError {
    ProviderError::MalformedResponse(e.to_string())
}

/// Looks up a schema dimension in a profile object keyed by display name or id.
pub(crate) fn profile_value<'a>(profile: &'a serde_json::Map<String, Value>, dim: &Dimension) -> Option<&'a Value> {
    profile.iter().find(|(k, _)| dim.matches_name(k)).map(|(_, v)| v)
}

pub(crate) fn fill_slots<'a>(dims: impl IntoIterator<Item = &'a Dimension>) -> Vec<FillSlot> {
    dims.into_iter()
        .map(|d| FillSlot { dimension: d.id.clone(), name: d.name.clone(), allowed: d.vocabulary.clone() })
        .collect()
}

/// Reads a concrete label for `dim` out of a profile object, enforcing the
/// vocabulary. `Unknown` is rejected.
pub(crate) fn concrete_label(profile: &serde_json::Map<String, Value>, dim: &Dimension) -> Result<String, ProviderError> {
    let raw = profile_value(profile, dim)
        .ok_or_else(|| malformed(format!("missing attribute `{}`", dim.name)))?
        .as_str()
        .ok_or_else(|| malformed(format!("attribute `{}` must be a string", dim.name)))?;
    match dim.canonical_label(raw) {
        Some(label) if label != UNKNOWN => Ok(label),
        Some(_) => Err(malformed(format!("`{}` needs a concrete value, not Unknown", dim.name))),
        None => Err(malformed(format!(
            "`{raw}` is not an allowed value for `{}`; choose from: {}",
            dim.name,
            dim.vocabulary.as_deref().unwrap_or_default().join(", ")
        ))),
    }
}

impl KnowledgeProvider for WorldModel {
    fn fingerprint(&self) -> String {
        self.client.fingerprint()
    }

    fn prioritize_dims(
        &self,
        topic: &str,
        schema: &DimensionSchema,
        params: &ProviderParams,
    ) -> Result<Vec<String>, ProviderError> {
        params.check()?;
        if topic.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("topic is empty".into()));
        }
        let task = Task::PrioritizeDims {
            topic: topic.to_string(),
            candidates: schema.dimensions.iter().map(|d| d.name.clone()).collect(),
            max_depth: params.max_depth,
        };
        let prompt = prompts::prioritize_dims(topic, schema, params.max_depth);
        self.client_for(params).ask(task, prompt, |raw| {
            let value = parse_structured(raw).map_err(malformed)?;
            let names = value
                .get("dimensions")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("expected a `dimensions` array"))?;
            let mut ids: Vec<String> = Vec::new();
            for name in names {
                if ids.len() == params.max_depth {
                    break;
                }
                let name = name.as_str().ok_or_else(|| malformed("dimension names must be strings"))?;
                let dim = schema
                    .resolve_name(name)
                    .ok_or_else(|| ProviderError::UnknownDimensionInResponse(name.to_string()))?;
                if !ids.contains(&dim.id) {
                    ids.push(dim.id.clone());
                }
            }
            if ids.is_empty() {
                return Err(malformed("no dimensions returned"));
            }
            Ok(ids)
        })
    }

    fn infer_conditional(
        &self,
        topic: &str,
        dimension: &Dimension,
        context: &PersonaVector,
        params: &ProviderParams,
        allowed: Option<&[String]>,
    ) -> Result<Vec<WeightedValue>, ProviderError> {
        params.check()?;
        if context.get(&dimension.id).is_some() {
            return Err(ProviderError::InvalidRequest(format!("`{}` is already assigned in the context", dimension.id)));
        }
        let task = Task::InferConditional {
            topic: topic.to_string(),
            dimension: dimension.id.clone(),
            name: dimension.name.clone(),
            context: context.clone(),
            max_branches: params.max_branches,
            allowed: allowed.map(<[String]>::to_vec),
        };
        // Rendered with the schema-free context; names come from the dimension ids.
        let ctx = prompts::context_string(topic, context, &DimensionSchema::default());
        let prompt =
            prompts::infer_conditional(&ctx, &dimension.name, params.max_branches, &prompts::allowed_clause(allowed));
        self.client_for(params).ask(task, prompt, |raw| {
            let value = parse_structured(raw).map_err(malformed)?;
            let items = value
                .get("distribution")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("expected a `distribution` array"))?;
            if items.is_empty() {
                return Err(ProviderError::EmptyDistribution);
            }
            if items.len() > params.max_branches {
                return Err(malformed(format!(
                    "returned {} values but at most {} are allowed",
                    items.len(),
                    params.max_branches
                )));
            }
            let mut values: Vec<WeightedValue> = Vec::with_capacity(items.len());
            for item in items {
                let label = item.get("value").and_then(Value::as_str).ok_or_else(|| malformed("missing `value`"))?;
                let weight = item
                    .get("probability")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| malformed(format!("missing numeric `probability` for `{label}`")))?;
                let label = match allowed {
                    Some(allowed) => allowed.iter().find(|a| a.eq_ignore_ascii_case(label.trim())).cloned(),
                    None => dimension.canonical_label(label),
                }
                .filter(|l| l != UNKNOWN)
                .ok_or_else(|| ProviderError::DisallowedValue {
                    dimension: dimension.id.clone(),
                    label: label.to_string(),
                })?;
                if values.iter().any(|v| v.label == label) {
                    return Err(malformed(format!("value `{label}` listed twice")));
                }
                values.push(WeightedValue::new(label, weight));
            }
            let positive: Vec<WeightedValue> = values.into_iter().filter(|v| v.weight != 0.0).collect();
            normalize_weights(&positive)
        })
    }

    fn generate_persona(
        &self,
        topic: &str,
        fixed: &PersonaVector,
        schema: &DimensionSchema,
        params: &ProviderParams,
        variant: usize,
    ) -> Result<PersonaRecord, ProviderError> {
        for a in fixed {
            let dim = schema
                .get(&a.dimension_id)
                .ok_or_else(|| ProviderError::InvalidRequest(format!("unknown dimension `{}`", a.dimension_id)))?;
            if !dim.accepts(&a.label) || a.label == UNKNOWN {
                return Err(ProviderError::InvalidRequest(format!("`{}` is not valid for `{}`", a.label, dim.id)));
            }
        }
        let open: Vec<&Dimension> = schema.dimensions.iter().filter(|d| fixed.get(&d.id).is_none()).collect();
        let mut values: BTreeMap<String, String> =
            fixed.iter().map(|a| (a.dimension_id.clone(), a.label.clone())).collect();
        if open.is_empty() {
            return Ok(PersonaRecord::new(values, Provenance::Augmented, None));
        }
        let fill = fill_slots(open.iter().copied());
        let prompt = prompts::generate_persona(topic, fixed, schema, &fill, variant);
        let task = Task::GeneratePersona { topic: topic.to_string(), fixed: fixed.clone(), fill, variant };
        let filled = self.client_for(params).ask(task, prompt, |raw| {
            let value = parse_structured(raw).map_err(malformed)?;
            let profile = value
                .get("profile")
                .and_then(Value::as_object)
                .or_else(|| value.as_object())
                .ok_or_else(|| malformed("expected a `profile` object"))?;
            for AttributeValue { dimension_id, label } in fixed {
                let dim = schema.get(dimension_id).expect("checked above");
                if let Some(found) = profile_value(profile, dim) {
                    let found = found.as_str().unwrap_or_default();
                    if dim.canonical_label(found).as_deref() != Some(label.as_str()) {
                        return Err(ProviderError::ConstraintViolatedInResponse {
                            dimension: dimension_id.clone(),
                            expected: label.clone(),
                            found: found.to_string(),
                        });
                    }
                }
            }
            open.iter().map(|d| Ok((d.id.clone(), concrete_label(profile, d)?))).collect::<Result<Vec<_>, _>>()
        })?;
        values.extend(filled);
        Ok(PersonaRecord::new(values, Provenance::Augmented, None))
    }
}
