//! Real persona store: survey-row ingestion, label harmonization and exact
//! multi-attribute lookup.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GroundingError;
use crate::persona::{
    dims, validate_record, DimensionSchema, PersonaRecord, PersonaVector, Provenance, AGE_BRACKETS, FORMAT_VERSION,
    UNKNOWN,
};

/// How raw survey values become schema labels for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Rule {
    /// Integer ranges; `max` is inclusive and open-ended when absent.
    Brackets { brackets: Vec<Bracket> },
    /// Code lookup. Unlisted codes pass through verbatim when `passthrough` is set.
    Codes {
        codes: BTreeMap<String, String>,
        #[serde(default)]
        passthrough: bool,
    },
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub min: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<i64>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonization {
    pub format_version: u32,
    /// Column carrying the row key; rows are numbered from 1 when the column is absent.
    #[serde(default = "default_id_column")]
    pub id_column: String,
    /// dimension id -> source column
    pub columns: BTreeMap<String, String>,
    /// dimension id -> rule; dimensions without a rule pass through.
    #[serde(default)]
    pub rules: BTreeMap<String, Rule>,
}

fn default_id_column() -> String {
    "id".into()
}

fn codes(pairs: &[(&str, &str)]) -> Rule {
    Rule::Codes { codes: pairs.iter().map(|(c, l)| (c.to_string(), l.to_string())).collect(), passthrough: false }
}

fn indexed(labels: &[&str], first: i64) -> Rule {
    Rule::Codes {
        codes: labels.iter().enumerate().map(|(i, l)| ((first + i as i64).to_string(), l.to_string())).collect(),
        passthrough: false,
    }
}

impl Harmonization {
    /// Default column map (the schema's source codes) and survey code tables.
    pub fn for_schema(schema: &DimensionSchema) -> Self {
        use dims::*;
        let columns = schema.dimensions.iter().map(|d| (d.id.clone(), d.source_code.clone())).collect();
        let age_bounds = [(18, Some(24)), (25, Some(34)), (35, Some(44)), (45, Some(54)), (55, Some(64)), (65, None)];
        let mut rules = BTreeMap::new();
        rules.insert(
            AGE.to_string(),
            Rule::Brackets {
                brackets: AGE_BRACKETS
                    .iter()
                    .zip(age_bounds)
                    .map(|(l, (min, max))| Bracket { min, max, label: l.to_string() })
                    .collect(),
            },
        );
        rules.insert(GENDER.to_string(), indexed(crate::persona::GENDERS, 1));
        rules.insert(MARITAL_STATUS.to_string(), indexed(crate::persona::MARITAL_STATUSES, 1));
        rules.insert(
            EDUCATION.to_string(),
            codes(&[
                ("0", "Primary"),
                ("1", "Primary"),
                ("2", "Lower secondary"),
                ("3", "Upper secondary"),
                ("4", "Post-secondary"),
                ("5", "Post-secondary"),
                ("6", "University"),
                ("7", "Postgraduate"),
                ("8", "Postgraduate"),
            ]),
        );
        if let Rule::Codes { codes, .. } = indexed(OCCUPATIONS, 0) {
            rules.insert(OCCUPATION.to_string(), Rule::Codes { codes, passthrough: true });
        }
        let mut income = BTreeMap::new();
        for code in 1..=10 {
            let label = match code {
                1..=3 => "Low",
                4..=7 => "Medium",
                _ => "High",
            };
            income.insert(code.to_string(), label.to_string());
        }
        rules.insert(INCOME_LEVEL.to_string(), Rule::Codes { codes: income, passthrough: false });
        rules.insert(FINANCIAL_STATUS.to_string(), indexed(crate::persona::FINANCIAL_STATUSES, 1));
        rules.insert(SOCIAL_CLASS.to_string(), indexed(crate::persona::SOCIAL_CLASSES, 1));
        rules.insert(RELIGION.to_string(), indexed(crate::persona::RELIGIONS, 0));
        rules.insert(
            COUNTRY.to_string(),
            Rule::Codes { codes: COUNTRY_CODES.iter().map(|(c, l)| (c.to_string(), l.to_string())).collect(), passthrough: true },
        );
        rules.insert(
            LANGUAGE.to_string(),
            Rule::Codes {
                codes: LANGUAGE_CODES.iter().map(|(c, l)| (c.to_string(), l.to_string())).collect(),
                passthrough: true,
            },
        );
        rules.insert(ETHNICITY.to_string(), Rule::Passthrough);
        Self { format_version: FORMAT_VERSION, id_column: default_id_column(), columns, rules }
    }

    pub fn from_json(text: &str) -> Result<Self, GroundingError> {
        let h: Harmonization =
            serde_json::from_str(text).map_err(|e| GroundingError::InvalidConfig(format!("harmonization: {e}")))?;
        if h.format_version != FORMAT_VERSION {
            return Err(GroundingError::InvalidConfig(format!(
                "harmonization format_version {} is not supported",
                h.format_version
            )));
        }
        Ok(h)
    }

    pub fn load(path: &Path) -> Result<Self, GroundingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GroundingError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Maps one raw cell to a schema label. `None` marks a missing or
    /// unmappable value.
    pub fn harmonize(&self, schema: &DimensionSchema, dimension: &str, raw: &str) -> Option<String> {
        let dim = schema.get(dimension)?;
        let raw = raw.trim();
        if raw.is_empty() {
            return None;
        }
        let numeric = raw.parse::<f64>().ok().filter(|v| v.fract() == 0.0).map(|v| v as i64);
        // survey missing-value codes are negative
        if numeric.is_some_and(|v| v < 0) {
            return None;
        }
        if let Some(label) = dim.canonical_label(raw).filter(|_| numeric.is_none() && dim.is_closed()) {
            return (label != UNKNOWN).then_some(label);
        }
        let label = match self.rules.get(dimension).unwrap_or(&Rule::Passthrough) {
            Rule::Brackets { brackets } => {
                let v = numeric?;
                brackets.iter().find(|b| v >= b.min && b.max.is_none_or(|m| v <= m))?.label.clone()
            }
            Rule::Codes { codes, passthrough } => {
                let key = numeric.map(|v| v.to_string()).unwrap_or_else(|| raw.to_string());
                match codes.get(&key) {
                    Some(l) => l.clone(),
                    None if *passthrough => raw.to_string(),
                    None => return None,
                }
            }
            Rule::Passthrough => raw.to_string(),
        };
        dim.canonical_label(&label).filter(|l| l != UNKNOWN)
    }
}

pub const OCCUPATIONS: &[&str] = &[
    "Never had a job",
    "Professional",
    "Higher administrative",
    "Clerical",
    "Sales",
    "Service",
    "Skilled worker",
    "Semi-skilled worker",
    "Unskilled worker",
    "Farm worker",
    "Farm proprietor",
];

pub const COUNTRY_CODES: &[(&str, &str)] = &[
    ("36", "Australia"),
    ("76", "Brazil"),
    ("124", "Canada"),
    ("156", "China"),
    ("250", "France"),
    ("276", "Germany"),
    ("356", "India"),
    ("392", "Japan"),
    ("484", "Mexico"),
    ("566", "Nigeria"),
    ("643", "Russia"),
    ("710", "South Africa"),
    ("804", "Ukraine"),
    ("826", "United Kingdom"),
    ("840", "United States"),
];

pub const LANGUAGE_CODES: &[(&str, &str)] = &[
    ("EN", "English"),
    ("DE", "German"),
    ("PT", "Portuguese"),
    ("HI", "Hindi"),
    ("ES", "Spanish"),
    ("FR", "French"),
    ("ZH", "Chinese"),
    ("JA", "Japanese"),
    ("RU", "Russian"),
    ("UK", "Ukrainian"),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub ingested: usize,
    pub skipped: usize,
    /// dimension id -> rows skipped because that value was missing or unmappable
    pub skipped_by_dimension: BTreeMap<String, usize>,
}

/// Immutable store of real persona records with per-dimension inverted indices.
#[derive(Debug, Clone, Default)]
pub struct PersonaDatabase {
    records: Vec<PersonaRecord>,
    /// dimension id -> label -> ascending record positions
    index: BTreeMap<String, BTreeMap<String, Vec<usize>>>,
    report: IngestReport,
}

impl PersonaDatabase {
    /// Builds a database from already-harmonized records. Records must be
    /// Real, carry a source id, and validate.
    pub fn from_records(records: Vec<PersonaRecord>, schema: &DimensionSchema) -> Result<Self, GroundingError> {
        for r in &records {
            let issues = validate_record(r, schema);
            if !issues.is_empty() {
                return Err(GroundingError::InvalidRecord(format!(
                    "{}: {}",
                    r.source_id.as_deref().unwrap_or("?"),
                    issues[0]
                )));
            }
            if r.provenance != Provenance::Real || r.source_id.is_none() {
                return Err(GroundingError::InvalidRecord("database records must be Real with a source id".into()));
            }
        }
        let report =
            IngestReport { rows: records.len(), ingested: records.len(), ..Default::default() };
        Ok(Self::indexed(records, report))
    }

    fn indexed(records: Vec<PersonaRecord>, report: IngestReport) -> Self {
        let mut index: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            for (d, l) in &r.values {
                index.entry(d.clone()).or_default().entry(l.clone()).or_default().push(i);
            }
        }
        Self { records, index, report }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PersonaRecord] {
        &self.records
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    /// Positions of every record satisfying all assignments in `persona`, ascending.
    pub fn matching(&self, persona: &PersonaVector) -> Vec<usize> {
        let mut lists: Vec<&Vec<usize>> = Vec::with_capacity(persona.len());
        for a in persona {
            match self.index.get(&a.dimension_id).and_then(|m| m.get(&a.label)) {
                Some(list) => lists.push(list),
                None => return Vec::new(),
            }
        }
        if lists.is_empty() {
            return (0..self.records.len()).collect();
        }
        lists.sort_by_key(|l| l.len());
        let (first, rest) = lists.split_first().expect("non-empty");
        first.iter().copied().filter(|i| rest.iter().all(|l| l.binary_search(i).is_ok())).collect()
    }

    /// m(v): number of records matching `persona` exactly.
    pub fn count_matching(&self, persona: &PersonaVector) -> usize {
        self.matching(persona).len()
    }

    /// Reads CSV (by extension `.csv`) or JSON lines keyed by survey columns.
    pub fn ingest(path: &Path, schema: &DimensionSchema, harmonization: &Harmonization) -> Result<Self, GroundingError> {
        let unreadable = |e: &dyn std::fmt::Display| GroundingError::UnreadableSource(format!("{}: {e}", path.display()));
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            let file = std::fs::File::open(path).map_err(|e| unreadable(&e))?;
            Self::ingest_csv(file, schema, harmonization)
        } else {
            let text = std::fs::read_to_string(path).map_err(|e| unreadable(&e))?;
            Self::ingest_jsonl(&text, schema, harmonization)
        }
    }

    pub fn ingest_csv(
        reader: impl std::io::Read,
        schema: &DimensionSchema,
        harmonization: &Harmonization,
    ) -> Result<Self, GroundingError> {
        let mut csv = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
        let headers = csv.headers().map_err(|e| GroundingError::UnreadableSource(e.to_string()))?.clone();
        if headers.is_empty() {
            return Ok(Self::default());
        }
        let position = |col: &str| headers.iter().position(|h| h.trim() == col);
        let columns = resolve_columns(schema, harmonization, |c| position(c).is_some())?;
        let columns: Vec<(String, usize)> =
            columns.into_iter().map(|(d, c)| (d, position(&c).expect("resolved"))).collect();
        let id_pos = position(&harmonization.id_column);
        let mut rows = Vec::new();
        for (n, row) in csv.records().enumerate() {
            let row = row.map_err(|e| GroundingError::UnreadableSource(format!("row {}: {e}", n + 1)))?;
            let id = id_pos.and_then(|p| row.get(p)).map(str::to_string).unwrap_or_else(|| (n + 1).to_string());
            let cells: Vec<(String, String)> =
                columns.iter().map(|(d, p)| (d.clone(), row.get(*p).unwrap_or("").to_string())).collect();
            rows.push((id, cells));
        }
        Ok(Self::assemble(rows, schema, harmonization))
    }

    pub fn ingest_jsonl(text: &str, schema: &DimensionSchema, harmonization: &Harmonization) -> Result<Self, GroundingError> {
        let mut objects = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line)
                .map_err(|e| GroundingError::UnreadableSource(format!("line {}: {e}", n + 1)))?;
            objects.push(value);
        }
        let Some(first) = objects.first() else {
            return Ok(Self::default());
        };
        let columns = resolve_columns(schema, harmonization, |c| first.contains_key(c))?;
        let cell = |v: Option<&serde_json::Value>| match v {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Null) | None => String::new(),
            Some(other) => other.to_string(),
        };
        let rows = objects
            .iter()
            .enumerate()
            .map(|(n, o)| {
                let id = o.get(&harmonization.id_column).map(|v| cell(Some(v))).unwrap_or_else(|| (n + 1).to_string());
                let cells = columns.iter().map(|(d, c)| (d.clone(), cell(o.get(c)))).collect();
                (id, cells)
            })
            .collect();
        Ok(Self::assemble(rows, schema, harmonization))
    }

    fn assemble(rows: Vec<(String, Vec<(String, String)>)>, schema: &DimensionSchema, h: &Harmonization) -> Self {
        let mut report = IngestReport { rows: rows.len(), ..Default::default() };
        let mut records = Vec::new();
        for (id, cells) in rows {
            let mut values = BTreeMap::new();
            let mut missing = None;
            for (dim, raw) in &cells {
                match h.harmonize(schema, dim, raw) {
                    Some(label) => {
                        values.insert(dim.clone(), label);
                    }
                    None => {
                        missing = Some(dim.clone());
                        break;
                    }
                }
            }
            match missing {
                Some(dim) => {
                    report.skipped += 1;
                    *report.skipped_by_dimension.entry(dim).or_insert(0) += 1;
                }
                None => records.push(PersonaRecord::new(values, Provenance::Real, Some(id))),
            }
        }
        report.ingested = records.len();
        Self::indexed(records, report)
    }
}

/// Pairs every schema dimension with its source column, failing when a column
/// is unmapped or absent from the source.
fn resolve_columns(
    schema: &DimensionSchema,
    h: &Harmonization,
    present: impl Fn(&str) -> bool,
) -> Result<Vec<(String, String)>, GroundingError> {
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for d in &schema.dimensions {
        match h.columns.get(&d.id) {
            Some(c) if present(c) => out.push((d.id.clone(), c.clone())),
            Some(c) => missing.push(c.clone()),
            None => missing.push(d.id.clone()),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(GroundingError::ColumnMapIncomplete(missing))
    }
}
