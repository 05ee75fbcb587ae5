//! Demographic schema, persona records, populations and marginal distributions.
//!
//! Every other module speaks in these types. Records are keyed by stable
//! dimension ids; labels are plain strings, with `"Unknown"` reserved for
//! values that could not be determined.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current on-disk format version for schema and population files.
pub const FORMAT_VERSION: u32 = 1;

/// Reserved label for undeterminable values. Valid in every dimension and
/// excluded from marginals.
pub const UNKNOWN: &str = "Unknown";

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("dimension `{0}` has no known values in this population")]
    NoKnownValues(String),
    #[error("invalid distribution for `{dimension}`: {reason}")]
    InvalidDistribution { dimension: String, reason: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    BasicDemographics,
    SocioEconomicStatus,
    CulturalIdentity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub source_code: String,
    /// Closed list of allowed labels. `None` means any non-empty label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

impl Dimension {
    fn new(id: &str, name: &str, category: Category, code: &str, vocab: Option<&[&str]>) -> Self {
        Self {
            id: id.to_string(),
            name: name.to_string(),
            category,
            source_code: code.to_string(),
            vocabulary: vocab.map(|v| v.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn is_closed(&self) -> bool {
        self.vocabulary.is_some()
    }

    /// Whether `label` is acceptable for this dimension. `Unknown` always is.
    pub fn accepts(&self, label: &str) -> bool {
        if label.trim().is_empty() {
            return false;
        }
        if label == UNKNOWN {
            return true;
        }
        match &self.vocabulary {
            Some(vocab) => vocab.iter().any(|v| v == label),
            None => true,
        }
    }

    /// Maps a free-form label onto the vocabulary spelling, ignoring case and
    /// surrounding whitespace. Open dimensions return the trimmed input.
    pub fn canonical_label(&self, raw: &str) -> Option<String> {
        let raw = raw.trim();
        if raw.is_empty() {
            return None;
        }
        if raw.eq_ignore_ascii_case(UNKNOWN) {
            return Some(UNKNOWN.to_string());
        }
        match &self.vocabulary {
            Some(vocab) => vocab.iter().find(|v| v.eq_ignore_ascii_case(raw)).cloned(),
            None => Some(raw.to_string()),
        }
    }

    /// Case-insensitive match against the display name or id.
    pub fn matches_name(&self, name: &str) -> bool {
        let name = name.trim();
        self.name.eq_ignore_ascii_case(name) || self.id.eq_ignore_ascii_case(name)
    }
}

pub mod dims {
    pub const COUNTRY: &str = "country";
    pub const LANGUAGE: &str = "language";
    pub const GENDER: &str = "gender";
    pub const AGE: &str = "age";
    pub const MARITAL_STATUS: &str = "marital_status";
    pub const EDUCATION: &str = "education";
    pub const OCCUPATION: &str = "occupation";
    pub const INCOME_LEVEL: &str = "income_level";
    pub const FINANCIAL_STATUS: &str = "financial_status";
    pub const SOCIAL_CLASS: &str = "social_class";
    pub const RELIGION: &str = "religion";
    pub const ETHNICITY: &str = "ethnicity";
}

pub const GENDERS: &[&str] = &["Male", "Female"];
pub const AGE_BRACKETS: &[&str] = &["18-24", "25-34", "35-44", "45-54", "55-64", "65+"];
pub const MARITAL_STATUSES: &[&str] =
    &["Married", "Living together", "Divorced", "Separated", "Widowed", "Single"];
pub const EDUCATION_LEVELS: &[&str] = &[
    "Primary",
    "Lower secondary",
    "Upper secondary",
    "Post-secondary",
    "University",
    "Postgraduate",
];
pub const INCOME_LEVELS: &[&str] = &["Low", "Medium", "High"];
pub const FINANCIAL_STATUSES: &[&str] =
    &["Saved money", "Just got by", "Spent savings", "Borrowed money"];
pub const SOCIAL_CLASSES: &[&str] = &[
    "Upper class",
    "Upper middle class",
    "Lower middle class",
    "Working class",
    "Lower class",
];
pub const RELIGIONS: &[&str] = &[
    "None",
    "Catholic",
    "Protestant",
    "Orthodox",
    "Jewish",
    "Muslim",
    "Hindu",
    "Buddhist",
    "Other Christian",
    "Other",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSchema {
    pub format_version: u32,
    pub dimensions: Vec<Dimension>,
}

impl Default for DimensionSchema {
    /// The twelve survey-derived dimensions, five basic demographics, five
    /// socio-economic and two cultural.
    fn default() -> Self {
        use dims::*;
        use Category::*;
        let dimensions = vec![
            Dimension::new(COUNTRY, "Country", BasicDemographics, "B_COUNTRY", None),
            Dimension::new(LANGUAGE, "Language", BasicDemographics, "S_INTLANGUAGE", None),
            Dimension::new(GENDER, "Gender", BasicDemographics, "Q260", Some(GENDERS)),
            Dimension::new(AGE, "Age", BasicDemographics, "Q262", Some(AGE_BRACKETS)),
            Dimension::new(
                MARITAL_STATUS,
                "Marital Status",
                BasicDemographics,
                "Q273",
                Some(MARITAL_STATUSES),
            ),
            Dimension::new(EDUCATION, "Education", SocioEconomicStatus, "Q275", Some(EDUCATION_LEVELS)),
            Dimension::new(OCCUPATION, "Occupation", SocioEconomicStatus, "Q281", None),
            Dimension::new(INCOME_LEVEL, "Income Level", SocioEconomicStatus, "Q288", Some(INCOME_LEVELS)),
            Dimension::new(
                FINANCIAL_STATUS,
                "Financial Status",
                SocioEconomicStatus,
                "Q286",
                Some(FINANCIAL_STATUSES),
            ),
            Dimension::new(SOCIAL_CLASS, "Social Class", SocioEconomicStatus, "Q287", Some(SOCIAL_CLASSES)),
            Dimension::new(RELIGION, "Religion", CulturalIdentity, "Q289", Some(RELIGIONS)),
            Dimension::new(ETHNICITY, "Ethnicity", CulturalIdentity, "Q290", None),
        ];
        Self { format_version: FORMAT_VERSION, dimensions }
    }
}

impl DimensionSchema {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self, PersonaError> {
        let schema = Self { format_version: FORMAT_VERSION, dimensions };
        schema.check()?;
        Ok(schema)
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&Dimension, PersonaError> {
        self.get(id).ok_or_else(|| PersonaError::UnknownDimension(id.to_string()))
    }

    /// Resolves a provider- or user-supplied dimension name to its id.
    pub fn resolve_name(&self, name: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.matches_name(name))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.dimensions.iter().map(|d| d.id.as_str())
    }

    fn check(&self) -> Result<(), PersonaError> {
        let mut seen = std::collections::HashSet::new();
        for dim in &self.dimensions {
            if dim.id.trim().is_empty() {
                return Err(PersonaError::InvalidSchema("empty dimension id".into()));
            }
            if !seen.insert(dim.id.as_str()) {
                return Err(PersonaError::InvalidSchema(format!("duplicate dimension id `{}`", dim.id)));
            }
            if let Some(vocab) = &dim.vocabulary {
                let mut labels = std::collections::HashSet::new();
                for label in vocab {
                    if label.trim().is_empty() {
                        return Err(PersonaError::InvalidSchema(format!("empty label in `{}`", dim.id)));
                    }
                    if !labels.insert(label.as_str()) {
                        return Err(PersonaError::InvalidSchema(format!(
                            "duplicate label `{label}` in `{}`",
                            dim.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PersonaError> {
        let schema: Self = serde_json::from_str(text)?;
        if schema.format_version != FORMAT_VERSION {
            return Err(PersonaError::FormatVersionMismatch {
                found: schema.format_version,
                expected: FORMAT_VERSION,
            });
        }
        schema.check()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, PersonaError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeValue {
    #[serde(rename = "dimension")]
    pub dimension_id: String,
    pub label: String,
}

impl AttributeValue {
    pub fn new(dimension_id: impl Into<String>, label: impl Into<String>) -> Self {
        Self { dimension_id: dimension_id.into(), label: label.into() }
    }
}

/// Partial persona over an ordered prefix of prioritized dimensions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonaVector(Vec<AttributeValue>);

impl PersonaVector {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut v = Self::new();
        for (d, l) in pairs {
            v.push(AttributeValue::new(d, l));
        }
        v
    }

    /// Appends an assignment. Panics if the dimension is already present.
    pub fn push(&mut self, value: AttributeValue) {
        assert!(
            self.get(&value.dimension_id).is_none(),
            "dimension `{}` assigned twice",
            value.dimension_id
        );
        self.0.push(value);
    }

    pub fn with(&self, value: AttributeValue) -> Self {
        let mut next = self.clone();
        next.push(value);
        next
    }

    pub fn get(&self, dimension_id: &str) -> Option<&str> {
        self.0.iter().find(|a| a.dimension_id == dimension_id).map(|a| a.label.as_str())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, AttributeValue> {
        self.0.iter()
    }

    pub fn prefix(&self, len: usize) -> Self {
        Self(self.0[..len.min(self.0.len())].to_vec())
    }

    /// Labels in order; the lexicographic tie-break key for apportionment.
    pub fn labels(&self) -> Vec<&str> {
        self.0.iter().map(|a| a.label.as_str()).collect()
    }
}

impl fmt::Display for PersonaVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| format!("{}={}", a.dimension_id, a.label)).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

impl<'a> IntoIterator for &'a PersonaVector {
    type Item = &'a AttributeValue;
    type IntoIter = std::slice::Iter<'a, AttributeValue>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Real,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaRecord {
    /// dimension id -> label
    pub values: BTreeMap<String, String>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
}

impl PersonaRecord {
    pub fn new(values: BTreeMap<String, String>, provenance: Provenance, source_id: Option<String>) -> Self {
        Self { values, provenance, source_id, free_text: None }
    }

    pub fn get(&self, dimension_id: &str) -> Option<&str> {
        self.values.get(dimension_id).map(String::as_str)
    }

    /// True when every assignment of `persona` holds in this record.
    pub fn matches(&self, persona: &PersonaVector) -> bool {
        persona.iter().all(|a| self.get(&a.dimension_id) == Some(a.label.as_str()))
    }

    /// Template rendering used for embedding-based retrieval and clustering.
    pub fn render_text(&self) -> String {
        use dims::*;
        let v = |id: &str| self.get(id).unwrap_or(UNKNOWN);
        format!(
            "A {age} {gender} from {country}, {education}, working as {occupation}, \
             speaking {language}, {marital}, {income} income, {financial}, {class}, \
             religion {religion}, ethnicity {ethnicity}.",
            age = v(AGE),
            gender = v(GENDER),
            country = v(COUNTRY),
            education = v(EDUCATION),
            occupation = v(OCCUPATION),
            language = v(LANGUAGE),
            marital = v(MARITAL_STATUS),
            income = v(INCOME_LEVEL),
            financial = v(FINANCIAL_STATUS),
            class = v(SOCIAL_CLASS),
            religion = v(RELIGION),
            ethnicity = v(ETHNICITY),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingDimension { dimension: String },
    UnknownLabel { dimension: String, label: String },
    ExtraDimension { dimension: String },
    MissingSourceId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingDimension { dimension } => write!(f, "missing dimension `{dimension}`"),
            Violation::UnknownLabel { dimension, label } => {
                write!(f, "label `{label}` is not allowed for `{dimension}`")
            }
            Violation::ExtraDimension { dimension } => write!(f, "dimension `{dimension}` is not in the schema"),
            Violation::MissingSourceId => write!(f, "real record without source id"),
        }
    }
}

/// Checks a record against the schema. Violations come back in schema order,
/// followed by any dimensions the schema does not know.
pub fn validate_record(record: &PersonaRecord, schema: &DimensionSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    for dim in &schema.dimensions {
        match record.get(&dim.id) {
            None => out.push(Violation::MissingDimension { dimension: dim.id.clone() }),
            Some(label) if !dim.accepts(label) => out.push(Violation::UnknownLabel {
                dimension: dim.id.clone(),
                label: label.to_string(),
            }),
            Some(_) => {}
        }
    }
    for key in record.values.keys() {
        if schema.get(key).is_none() {
            out.push(Violation::ExtraDimension { dimension: key.clone() });
        }
    }
    if record.provenance == Provenance::Real && record.source_id.is_none() {
        out.push(Violation::MissingSourceId);
    }
    out
}

/// Probability mass over the labels of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub dimension_id: String,
    pub entries: BTreeMap<String, f64>,
}

impl Distribution {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(dimension_id: impl Into<String>, entries: BTreeMap<String, f64>) -> Result<Self, PersonaError> {
        let dimension_id = dimension_id.into();
        let bad = |reason: String| PersonaError::InvalidDistribution { dimension: dimension_id.clone(), reason };
        if entries.is_empty() {
            return Err(bad("no entries".into()));
        }
        if let Some((label, p)) = entries.iter().find(|(_, p)| !(p.is_finite() && **p >= 0.0 && **p <= 1.0)) {
            return Err(bad(format!("probability {p} for `{label}` outside [0, 1]")));
        }
        let total: f64 = entries.values().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(bad(format!("probabilities sum to {total}")));
        }
        Ok(Self { dimension_id, entries })
    }

    /// Builds a distribution from label counts.
    pub fn from_counts(dimension_id: impl Into<String>, counts: &BTreeMap<String, usize>) -> Result<Self, PersonaError> {
        let total: usize = counts.values().sum();
        let dimension_id = dimension_id.into();
        if total == 0 {
            return Err(PersonaError::NoKnownValues(dimension_id));
        }
        let entries = counts
            .iter()
            .filter(|(_, c)| **c > 0)
            .map(|(l, c)| (l.clone(), *c as f64 / total as f64))
            .collect();
        Self::new(dimension_id, entries)
    }

    pub fn prob(&self, label: &str) -> f64 {
        self.entries.get(label).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationMeta {
    pub generator: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    /// Free-form generator details (allocation reports, similarity scores, flags).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
    /// Effective run configuration, echoed verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub topic: String,
    pub members: Vec<PersonaRecord>,
    pub meta: PopulationMeta,
}

#[derive(Serialize, Deserialize)]
struct PopulationFile {
    format_version: u32,
    kind: String,
    topic: String,
    size: usize,
    meta: PopulationMeta,
    members: Vec<PersonaRecord>,
}

impl Population {
    pub const KIND: &'static str = "population";

    pub fn new(topic: impl Into<String>, members: Vec<PersonaRecord>, meta: PopulationMeta) -> Self {
        Self { topic: topic.into(), members, meta }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// All violations, tagged with the member index.
    pub fn validate(&self, schema: &DimensionSchema) -> Vec<(usize, Violation)> {
        self.members
            .iter()
            .enumerate()
            .flat_map(|(i, m)| validate_record(m, schema).into_iter().map(move |v| (i, v)))
            .collect()
    }

    pub fn count_provenance(&self, provenance: Provenance) -> usize {
        self.members.iter().filter(|m| m.provenance == provenance).count()
    }

    pub fn to_json(&self) -> String {
        let file = PopulationFile {
            format_version: FORMAT_VERSION,
            kind: Self::KIND.to_string(),
            topic: self.topic.clone(),
            size: self.members.len(),
            meta: self.meta.clone(),
            members: self.members.clone(),
        };
        serde_json::to_string_pretty(&file).expect("population serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PersonaError> {
        let file: PopulationFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(PersonaError::FormatVersionMismatch { found: file.format_version, expected: FORMAT_VERSION });
        }
        if file.kind != Self::KIND {
            return Err(PersonaError::InvalidPopulation(format!("artifact kind is `{}`", file.kind)));
        }
        if file.size != file.members.len() {
            return Err(PersonaError::InvalidPopulation(format!(
                "declared size {} but {} members",
                file.size,
                file.members.len()
            )));
        }
        Ok(Self { topic: file.topic, members: file.members, meta: file.meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), PersonaError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PersonaError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Label counts for one dimension, `Unknown` excluded.
pub fn label_counts(population: &Population, dimension_id: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for member in &population.members {
        if let Some(label) = member.get(dimension_id) {
            if label != UNKNOWN {
                *counts.entry(label.to_string()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Empirical marginal of one dimension over the known values.
pub fn marginal(population: &Population, schema: &DimensionSchema, dimension_id: &str) -> Result<Distribution, PersonaError> {
    schema.require(dimension_id)?;
    if population.is_empty() {
        return Err(PersonaError::EmptyPopulation);
    }
    Distribution::from_counts(dimension_id, &label_counts(population, dimension_id))
}
