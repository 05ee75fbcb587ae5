//! Reference populations inferred from user-written text.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::persona::{DimensionSchema, PersonaRecord, Population, PopulationMeta, Provenance, UNKNOWN};
use crate::provider::chat::{LlmClient, Task};
use crate::provider::parse::parse_structured;
use crate::provider::{fill_slots, profile_value, prompts, ProviderError, ProviderParams};

/// Unique users required after filtering unless forced.
pub const MIN_USERS: usize = 50;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read corpus: {0}")]
    UnreadableCorpus(String),
    #[error("only {users} users survive filtering; at least {MIN_USERS} are required")]
    InsufficientVolume { users: usize },
    #[error("invalid filter policy: {0}")]
    InvalidPolicy(String),
    #[error("inferring persona for `{user}` failed: {source}")]
    Provider { user: String, source: ProviderError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPost {
    pub user_id: String,
    pub timestamp: String,
    pub text: String,
    pub theme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusText {
    pub timestamp: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusUser {
    pub user_id: String,
    pub theme: String,
    /// Newest first.
    pub texts: Vec<CorpusText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    /// Minimum whitespace tokens per text.
    pub min_tokens: usize,
    pub since: Option<NaiveDate>,
    pub until: Option<NaiveDate>,
    /// Minimum surviving texts per user.
    pub min_texts: usize,
    /// Maximum texts a user may have posted in the theme; heavier posters are
    /// treated as likely bots and dropped.
    pub max_texts: Option<usize>,
    pub strip_urls: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self { min_tokens: 15, since: None, until: None, min_texts: 1, max_texts: None, strip_urls: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub posts: usize,
    pub in_theme: usize,
    pub short_texts: usize,
    pub out_of_range: usize,
    pub users_seen: usize,
    pub users_too_few: usize,
    pub users_too_many: usize,
    pub users_kept: usize,
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusPost>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::UnreadableCorpus(format!("{}: {e}", path.display())))?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusPost>, BenchError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| BenchError::UnreadableCorpus(format!("line {}: {e}", n + 1))))
        .collect()
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn url_pattern() -> &'static Regex {
    static URLS: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    URLS.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").expect("valid pattern"))
}

/// Accepts RFC 3339 timestamps or bare `YYYY-MM-DD` dates.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(raw.trim()) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").ok().map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
}

impl FilterPolicy {
    pub fn check(&self) -> Result<(), BenchError> {
        if self.min_tokens == 0 {
            return Err(BenchError::InvalidPolicy("min_tokens must be at least 1".into()));
        }
        if let (Some(a), Some(b)) = (self.since, self.until) {
            if a > b {
                return Err(BenchError::InvalidPolicy("since is after until".into()));
            }
        }
        Ok(())
    }

    fn in_range(&self, timestamp: &str) -> bool {
        if self.since.is_none() && self.until.is_none() {
            return true;
        }
        let Some(t) = parse_timestamp(timestamp) else {
            return false;
        };
        let day = t.date_naive();
        self.since.is_none_or(|s| day >= s) && self.until.is_none_or(|u| day <= u)
    }
}

/// Keeps the posts of `theme` (every theme when `None`) that pass the length
/// and date filters, then drops users outside the text-count bounds. Users
/// come out sorted by id.
pub fn filter_corpus(
    posts: &[CorpusPost],
    theme: Option<&str>,
    policy: &FilterPolicy,
) -> Result<(Vec<CorpusUser>, FilterReport), BenchError> {
    policy.check()?;
    let mut report = FilterReport { posts: posts.len(), ..Default::default() };
    // (user, theme) -> (raw in-theme count, surviving texts)
    let mut users: BTreeMap<(String, String), (usize, Vec<CorpusText>)> = BTreeMap::new();
    for post in posts.iter().filter(|p| theme.is_none_or(|t| p.theme == t)) {
        report.in_theme += 1;
        let entry = users.entry((post.user_id.clone(), post.theme.clone())).or_default();
        entry.0 += 1;
        let body = if policy.strip_urls {
            url_pattern().replace_all(&post.text, " ").split_whitespace().collect::<Vec<_>>().join(" ")
        } else {
            post.text.trim().to_string()
        };
        if token_count(&body) < policy.min_tokens {
            report.short_texts += 1;
            continue;
        }
        if !policy.in_range(&post.timestamp) {
            report.out_of_range += 1;
            continue;
        }
        entry.1.push(CorpusText { timestamp: post.timestamp.clone(), body });
    }
    report.users_seen = users.len();
    let mut kept = Vec::new();
    for ((user_id, theme), (raw, mut texts)) in users {
        if policy.max_texts.is_some_and(|m| raw > m) {
            report.users_too_many += 1;
            continue;
        }
        if texts.is_empty() || texts.len() < policy.min_texts {
            report.users_too_few += 1;
            continue;
        }
        texts.sort_by(|a, b| {
            parse_timestamp(&b.timestamp).cmp(&parse_timestamp(&a.timestamp)).then_with(|| b.timestamp.cmp(&a.timestamp))
        });
        kept.push(CorpusUser { user_id, theme, texts });
    }
    report.users_kept = kept.len();
    Ok((kept, report))
}

/// Newest-first concatenation of a user's texts within `budget` tokens.
pub fn user_text(user: &CorpusUser, budget: usize) -> String {
    let mut used = 0;
    let mut parts = Vec::new();
    for t in &user.texts {
        let n = token_count(&t.body);
        if used + n > budget {
            if parts.is_empty() {
                parts.push(format!("- {}", t.body.split_whitespace().take(budget).collect::<Vec<_>>().join(" ")));
            }
            break;
        }
        used += n;
        parts.push(format!("- {}", t.body));
    }
    parts.join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub policy: FilterPolicy,
    pub token_budget: usize,
    pub force: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { policy: FilterPolicy::default(), token_budget: 4000, force: false }
    }
}

/// Text-to-persona inference for one user. `Unknown` is allowed everywhere;
/// other labels must come from the closed vocabularies.
pub fn infer_persona(
    client: &LlmClient,
    user: &CorpusUser,
    schema: &DimensionSchema,
    params: &ProviderParams,
    token_budget: usize,
) -> Result<PersonaRecord, ProviderError> {
    let fill = fill_slots(&schema.dimensions);
    let prompt = prompts::text_to_persona(&user.theme, &fill, &user_text(user, token_budget));
    let task = Task::InferFromText { theme: user.theme.clone(), user_id: user.user_id.clone(), fill };
    let client = client.clone().with_temperature(params.temperature).with_retries(params.retries);
    let values = client.ask(task, prompt, |raw| {
        let value = parse_structured(raw).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let profile = value
            .get("profile")
            .and_then(Value::as_object)
            .or_else(|| value.as_object())
            .ok_or_else(|| ProviderError::MalformedResponse("expected a profile object".into()))?;
        let mut values = BTreeMap::new();
        for d in &schema.dimensions {
            let raw = profile_value(profile, d)
                .and_then(Value::as_str)
                .ok_or_else(|| ProviderError::MalformedResponse(format!("missing attribute `{}`", d.name)))?;
            let label = d.canonical_label(raw).ok_or_else(|| ProviderError::DisallowedValue {
                dimension: d.id.clone(),
                label: raw.to_string(),
            })?;
            values.insert(d.id.clone(), label);
        }
        Ok(values)
    })?;
    Ok(PersonaRecord::new(values, Provenance::Real, Some(user.user_id.clone())))
}

/// One inferred persona per surviving user of `theme`, in user-id order.
pub fn build_benchmark(
    posts: &[CorpusPost],
    theme: &str,
    topic: &str,
    client: &LlmClient,
    schema: &DimensionSchema,
    params: &ProviderParams,
    config: &BenchConfig,
) -> Result<(Population, FilterReport), BenchError> {
    let (users, report) = filter_corpus(posts, Some(theme), &config.policy)?;
    if users.len() < MIN_USERS && !config.force {
        return Err(BenchError::InsufficientVolume { users: users.len() });
    }
    let members: Vec<PersonaRecord> = users
        .par_iter()
        .map(|u| {
            infer_persona(client, u, schema, params, config.token_budget)
                .map_err(|source| BenchError::Provider { user: u.user_id.clone(), source })
        })
        .collect::<Result<_, _>>()?;
    let unknown = members.iter().flat_map(|m| m.values.values()).filter(|l| *l == UNKNOWN).count();
    let mut meta = PopulationMeta {
        generator: "bench".into(),
        provider: Some(client.fingerprint()),
        ..Default::default()
    };
    meta.extra.insert("theme".into(), json!(theme));
    meta.extra.insert("filter".into(), serde_json::to_value(&report).expect("report serializes"));
    meta.extra.insert("policy".into(), serde_json::to_value(config).expect("config serializes"));
    meta.extra.insert("unknown_values".into(), json!(unknown));
    Ok((Population::new(topic, members, meta), report))
}
