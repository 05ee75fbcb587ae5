//! Synthetic survey world used for the bundled assets and offline tests.
//!
//! Education drives income, and financial status, social class and
//! occupation depend on a non-additive tier of the (education, income) pair.
//! The remaining dimensions are independent of both. A topic world and a
//! general background population share every conditional below the
//! (education, income) joint and differ only in that joint.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::CorpusPost;
use crate::grounding::database::{COUNTRY_CODES, LANGUAGE_CODES, OCCUPATIONS};
use crate::grounding::{GroundingError, Harmonization, PersonaDatabase};
use crate::persona::{
    dims, label_counts, DimensionSchema, Distribution, PersonaRecord, Population, PopulationMeta, Provenance, AGE_BRACKETS,
    EDUCATION_LEVELS, FINANCIAL_STATUSES, GENDERS, INCOME_LEVELS, MARITAL_STATUSES, RELIGIONS, SOCIAL_CLASSES,
};
use crate::provider::MockTable;

pub const WORLD_TOPIC: &str = "Opinions on remote knowledge work";
pub const THEMES: &[&str] = &["remote-work", "home-cooking", "city-cycling"];
pub const DATABASE_SEED: u64 = 20240601;
pub const CORPUS_SEED: u64 = 20240602;
pub const DATABASE_RECORDS: usize = 5000;
/// Rows with a missing-value code, skipped on ingestion.
pub const DATABASE_MISSING_ROWS: usize = 50;
pub const CORPUS_USERS: usize = 200;

type Table = &'static [(&'static str, f64)];

const GENDER: Table = &[("Male", 0.49), ("Female", 0.51)];
const AGE: Table = &[("18-24", 0.12), ("25-34", 0.2), ("35-44", 0.2), ("45-54", 0.18), ("55-64", 0.16), ("65+", 0.14)];
const MARITAL: Table = &[
    ("Married", 0.48),
    ("Living together", 0.1),
    ("Divorced", 0.08),
    ("Separated", 0.03),
    ("Widowed", 0.06),
    ("Single", 0.25),
];
const RELIGION: Table = &[
    ("None", 0.35),
    ("Catholic", 0.2),
    ("Protestant", 0.15),
    ("Hindu", 0.1),
    ("Muslim", 0.08),
    ("Buddhist", 0.05),
    ("Other Christian", 0.04),
    ("Jewish", 0.02),
    ("Orthodox", 0.01),
];
const ETHNICITY: Table = &[("White", 0.45), ("Asian", 0.25), ("Black", 0.12), ("Hispanic", 0.12), ("Mixed", 0.06)];
const COUNTRY: Table = &[
    ("United States", 0.3),
    ("United Kingdom", 0.15),
    ("Germany", 0.15),
    ("India", 0.2),
    ("Brazil", 0.1),
    ("Japan", 0.1),
];

fn language_table(country: &str) -> Table {
    match country {
        "United States" => &[("English", 0.85), ("Spanish", 0.15)],
        "Germany" => &[("German", 1.0)],
        "India" => &[("Hindi", 0.6), ("English", 0.4)],
        "Brazil" => &[("Portuguese", 1.0)],
        "Japan" => &[("Japanese", 1.0)],
        _ => &[("English", 1.0)],
    }
}

const FINANCIAL: [Table; 3] = [
    &[("Saved money", 0.7), ("Just got by", 0.2), ("Spent savings", 0.05), ("Borrowed money", 0.05)],
    &[("Saved money", 0.2), ("Just got by", 0.6), ("Spent savings", 0.1), ("Borrowed money", 0.1)],
    &[("Saved money", 0.05), ("Just got by", 0.25), ("Spent savings", 0.3), ("Borrowed money", 0.4)],
];
const SOCIAL_CLASS: [Table; 3] = [
    &[
        ("Upper class", 0.05),
        ("Upper middle class", 0.7),
        ("Lower middle class", 0.15),
        ("Working class", 0.07),
        ("Lower class", 0.03),
    ],
    &[
        ("Upper class", 0.03),
        ("Upper middle class", 0.1),
        ("Lower middle class", 0.62),
        ("Working class", 0.2),
        ("Lower class", 0.05),
    ],
    &[
        ("Upper class", 0.02),
        ("Upper middle class", 0.05),
        ("Lower middle class", 0.13),
        ("Working class", 0.65),
        ("Lower class", 0.15),
    ],
];
const OCCUPATION: [Table; 3] = [
    &[("Professional", 0.5), ("Higher administrative", 0.25), ("Clerical", 0.15), ("Sales", 0.1)],
    &[("Clerical", 0.4), ("Sales", 0.25), ("Professional", 0.15), ("Service", 0.2)],
    &[("Service", 0.35), ("Skilled worker", 0.25), ("Semi-skilled worker", 0.2), ("Unskilled worker", 0.2)],
];

fn education_group(education: &str) -> usize {
    match education {
        "Post-secondary" | "University" => 1,
        "Postgraduate" => 2,
        _ => 0,
    }
}

/// Tier 0 sits on the education/income diagonal; the other two tiers are
/// the mismatched cells. No additive score over the two axes reproduces it.
pub fn tier(education: &str, income: &str) -> usize {
    let i = INCOME_LEVELS.iter().position(|l| *l == income).expect("income label");
    (i + 3 - education_group(education)) % 3
}

fn pick<'a, R: Rng>(rng: &mut R, table: &[(&'a str, f64)]) -> &'a str {
    let dist = WeightedIndex::new(table.iter().map(|(_, w)| *w)).expect("positive weights");
    table[dist.sample(rng)].0
}

/// A population defined by its (education, income) joint.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub education: Vec<(String, f64)>,
    /// education -> income distribution
    pub income: BTreeMap<String, Vec<(String, f64)>>,
}

fn owned(table: &[(&str, f64)]) -> Vec<(String, f64)> {
    table.iter().map(|(l, w)| (l.to_string(), *w)).collect()
}

impl World {
    /// The topic's audience: highly educated, with income tracking education.
    pub fn topic() -> Self {
        let education = owned(&[("Upper secondary", 0.30), ("University", 0.35), ("Postgraduate", 0.35)]);
        let mut income = BTreeMap::new();
        income.insert("Upper secondary".into(), owned(&[("Low", 0.85), ("Medium", 0.12), ("High", 0.03)]));
        income.insert("University".into(), owned(&[("Low", 0.10), ("Medium", 0.80), ("High", 0.10)]));
        income.insert("Postgraduate".into(), owned(&[("Low", 0.03), ("Medium", 0.12), ("High", 0.85)]));
        Self { education, income }
    }

    /// Background survey population the database is drawn from.
    pub fn general() -> Self {
        let education = owned(&[
            ("Primary", 0.08),
            ("Lower secondary", 0.14),
            ("Upper secondary", 0.30),
            ("Post-secondary", 0.12),
            ("University", 0.24),
            ("Postgraduate", 0.12),
        ]);
        let by_group = [
            owned(&[("Low", 0.25), ("Medium", 0.45), ("High", 0.30)]),
            owned(&[("Low", 0.35), ("Medium", 0.30), ("High", 0.35)]),
            owned(&[("Low", 0.30), ("Medium", 0.45), ("High", 0.25)]),
        ];
        let income = EDUCATION_LEVELS.iter().map(|e| (e.to_string(), by_group[education_group(e)].clone())).collect();
        Self { education, income }
    }

    pub fn joint(&self) -> BTreeMap<(String, String), f64> {
        let mut out = BTreeMap::new();
        for (e, pe) in &self.education {
            for (i, pi) in &self.income[e] {
                out.insert((e.clone(), i.clone()), pe * pi);
            }
        }
        out
    }

    pub fn income_marginal(&self) -> Vec<(String, f64)> {
        INCOME_LEVELS
            .iter()
            .map(|l| {
                let p = self.joint().iter().filter(|((_, i), _)| i == l).map(|(_, p)| p).sum();
                (l.to_string(), p)
            })
            .collect()
    }

    pub fn sample_values<R: Rng>(&self, rng: &mut R) -> BTreeMap<String, String> {
        let edu_table: Vec<(&str, f64)> = self.education.iter().map(|(l, w)| (l.as_str(), *w)).collect();
        let education = pick(rng, &edu_table).to_string();
        let inc_table: Vec<(&str, f64)> = self.income[&education].iter().map(|(l, w)| (l.as_str(), *w)).collect();
        let income = pick(rng, &inc_table).to_string();
        let t = tier(&education, &income);
        let country = pick(rng, COUNTRY);
        let mut v = BTreeMap::new();
        v.insert(dims::COUNTRY.to_string(), country.to_string());
        v.insert(dims::LANGUAGE.to_string(), pick(rng, language_table(country)).to_string());
        v.insert(dims::GENDER.to_string(), pick(rng, GENDER).to_string());
        v.insert(dims::AGE.to_string(), pick(rng, AGE).to_string());
        v.insert(dims::MARITAL_STATUS.to_string(), pick(rng, MARITAL).to_string());
        v.insert(dims::EDUCATION.to_string(), education);
        v.insert(dims::OCCUPATION.to_string(), pick(rng, OCCUPATION[t]).to_string());
        v.insert(dims::INCOME_LEVEL.to_string(), income);
        v.insert(dims::FINANCIAL_STATUS.to_string(), pick(rng, FINANCIAL[t]).to_string());
        v.insert(dims::SOCIAL_CLASS.to_string(), pick(rng, SOCIAL_CLASS[t]).to_string());
        v.insert(dims::RELIGION.to_string(), pick(rng, RELIGION).to_string());
        v.insert(dims::ETHNICITY.to_string(), pick(rng, ETHNICITY).to_string());
        v
    }

    /// `n` draws as real records with ids `{prefix}{i}`.
    pub fn records(&self, n: usize, seed: u64, prefix: &str) -> Vec<PersonaRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| PersonaRecord::new(self.sample_values(&mut rng), Provenance::Real, Some(format!("{prefix}{i}"))))
            .collect()
    }

    pub fn population(&self, topic: &str, n: usize, seed: u64) -> Population {
        let meta = PopulationMeta { generator: "synthetic".into(), seed, ..Default::default() };
        Population::new(topic, self.records(n, seed, "gt-"), meta)
    }

    /// Oracle provider table: education then income, with the true
    /// conditionals and the income marginal for context-free requests.
    pub fn oracle_table(&self, topic: &str) -> MockTable {
        let mut table = MockTable::default().with_priorities(topic, &[dims::EDUCATION, dims::INCOME_LEVEL]);
        let as_refs = |v: &[(String, f64)]| v.iter().map(|(l, w)| (l.clone(), *w)).collect::<Vec<_>>();
        let rule = |table: MockTable, dim: &str, ctx: &[(&str, &str)], values: Vec<(String, f64)>| {
            let values: Vec<(&str, f64)> = values.iter().map(|(l, w)| (l.as_str(), *w)).collect();
            table.with_rule(topic, dim, ctx, &values)
        };
        table = rule(table, dims::EDUCATION, &[], as_refs(&self.education));
        table = rule(table, dims::INCOME_LEVEL, &[], self.income_marginal());
        for (e, dist) in &self.income {
            table = rule(table, dims::INCOME_LEVEL, &[(dims::EDUCATION, e)], as_refs(dist));
        }
        table
    }
}

/// In-memory database of `n` general-population records.
pub fn general_database(n: usize, seed: u64, schema: &DimensionSchema) -> Result<PersonaDatabase, GroundingError> {
    PersonaDatabase::from_records(World::general().records(n, seed, "db-"), schema)
}

fn code_of(pairs: &[(&str, &str)], label: &str) -> String {
    pairs.iter().find(|(_, l)| *l == label).map(|(c, _)| c.to_string()).expect("coded label")
}

fn index_code(labels: &[&str], label: &str, first: usize) -> String {
    (labels.iter().position(|l| *l == label).expect("label in vocabulary") + first).to_string()
}

/// Survey-coded CSV row for one record, in the default column layout.
fn coded_row<R: Rng>(id: usize, v: &BTreeMap<String, String>, rng: &mut R) -> Vec<String> {
    let age_range = |label: &str| -> (i64, i64) {
        match AGE_BRACKETS.iter().position(|l| *l == label).expect("age bracket") {
            0 => (18, 24),
            1 => (25, 34),
            2 => (35, 44),
            3 => (45, 54),
            4 => (55, 64),
            _ => (65, 90),
        }
    };
    let (lo, hi) = age_range(&v[dims::AGE]);
    let income = match v[dims::INCOME_LEVEL].as_str() {
        "Low" => rng.random_range(1..=3),
        "Medium" => rng.random_range(4..=7),
        _ => rng.random_range(8..=10),
    };
    let education = match v[dims::EDUCATION].as_str() {
        "Primary" => "1",
        "Lower secondary" => "2",
        "Upper secondary" => "3",
        "Post-secondary" => "4",
        "University" => "6",
        _ => "7",
    };
    vec![
        id.to_string(),
        code_of(COUNTRY_CODES, &v[dims::COUNTRY]),
        code_of(LANGUAGE_CODES, &v[dims::LANGUAGE]),
        index_code(GENDERS, &v[dims::GENDER], 1),
        rng.random_range(lo..=hi).to_string(),
        index_code(MARITAL_STATUSES, &v[dims::MARITAL_STATUS], 1),
        education.to_string(),
        index_code(OCCUPATIONS, &v[dims::OCCUPATION], 0),
        income.to_string(),
        index_code(FINANCIAL_STATUSES, &v[dims::FINANCIAL_STATUS], 1),
        index_code(SOCIAL_CLASSES, &v[dims::SOCIAL_CLASS], 1),
        index_code(RELIGIONS, &v[dims::RELIGION], 0),
        v[dims::ETHNICITY].clone(),
    ]
}

/// The bundled survey sample: general-population records in survey codes,
/// with a few rows carrying missing-value codes.
pub fn database_csv() -> String {
    let schema = DimensionSchema::default();
    let mut rng = ChaCha8Rng::seed_from_u64(DATABASE_SEED);
    let world = World::general();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend(schema.dimensions.iter().map(|d| d.source_code.clone()));
    w.write_record(&header).expect("in-memory write");
    let total = DATABASE_RECORDS + DATABASE_MISSING_ROWS;
    let stride = total / DATABASE_MISSING_ROWS;
    for id in 1..=total {
        let values = world.sample_values(&mut rng);
        let mut row = coded_row(id, &values, &mut rng);
        if id % stride == 0 {
            let col = rng.random_range(1..row.len());
            row[col] = ["-1", "-2", "-4", ""][rng.random_range(0..4)].to_string();
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn harmonization_json() -> String {
    let h = Harmonization::for_schema(&DimensionSchema::default());
    serde_json::to_string_pretty(&h).expect("serializes") + "\n"
}

const THEME_WORDS: [&[&str]; 3] = [
    &["video calls", "async updates", "the home office", "commute time", "focus blocks", "team rituals"],
    &["sourdough starters", "cast iron pans", "weeknight curries", "batch cooking", "fresh herbs", "spice blends"],
    &["protected bike lanes", "winter commuting", "cargo bikes", "traffic lights", "helmet laws", "bike parking"],
];
const OPENERS: &[&str] = &[
    "Honestly I keep thinking about",
    "Another week of dealing with",
    "Quick thought on",
    "Can we talk about",
    "Still not convinced about",
    "Really enjoying",
];
const CLOSERS: &[&str] = &[
    "and how it changes the way my whole day is organised from morning to night.",
    "because nobody around me seems to agree on what actually works in practice.",
    "which took me far longer to figure out than I would like to admit here.",
    "and I would love to hear how other people are handling the same thing lately.",
    "since the small details end up mattering much more than the big plans do.",
];
const SHORT: &[&str] = &["so true", "agree", "lol same here", "nice one!", "this again?"];

/// Toy corpus: one post stream per user, each user writing in one theme.
/// Some posts are too short to count, and a few users only ever write short
/// posts.
pub fn corpus_posts() -> Vec<CorpusPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED);
    let mut posts = Vec::new();
    for u in 0..CORPUS_USERS {
        let user_id = format!("user-{u:03}");
        let theme = u % THEMES.len();
        let only_short = u % 29 == 7;
        let n = rng.random_range(2..=6);
        for k in 0..n {
            let day = rng.random_range(1..=28);
            let month = rng.random_range(1..=12);
            let timestamp = format!("2024-{month:02}-{day:02}T{:02}:{:02}:00Z", rng.random_range(0..24), k * 7 % 60);
            let text = if only_short || rng.random_bool(0.2) {
                SHORT[rng.random_range(0..SHORT.len())].to_string()
            } else {
                let words = THEME_WORDS[theme];
                format!(
                    "{} {} {}",
                    OPENERS[rng.random_range(0..OPENERS.len())],
                    words[rng.random_range(0..words.len())],
                    CLOSERS[rng.random_range(0..CLOSERS.len())]
                )
            };
            posts.push(CorpusPost { user_id: user_id.clone(), timestamp, text, theme: THEMES[theme].to_string() });
        }
    }
    posts
}

pub fn corpus_jsonl() -> String {
    corpus_posts().iter().map(|p| serde_json::to_string(p).expect("serializes") + "\n").collect()
}

/// Mock provider table: the topic-world oracle plus the hidden profile of
/// every corpus user.
pub fn mock_table() -> MockTable {
    let mut table = World::topic().oracle_table(WORLD_TOPIC);
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED ^ 0x5eed);
    let world = World::general();
    for u in 0..CORPUS_USERS {
        let mut values = world.sample_values(&mut rng);
        if u % 17 == 3 {
            values.insert(dims::RELIGION.to_string(), crate::persona::UNKNOWN.to_string());
        }
        table.personas.insert(format!("user-{u:03}"), values);
    }
    table.judge_score = Some(4);
    table
}

pub fn mock_table_json() -> String {
    serde_json::to_string_pretty(&mock_table()).expect("serializes") + "\n"
}

/// Documentation of the bundled assets, including the database marginals.
pub fn assets_readme() -> String {
    let schema = DimensionSchema::default();
    let h = Harmonization::for_schema(&schema);
    let db = PersonaDatabase::ingest_csv(database_csv().as_bytes(), &schema, &h).expect("bundled database ingests");
    let report = db.report();
    let pop = Population::new("", db.records().to_vec(), PopulationMeta::default());
    let mut out = String::new();
    out.push_str("# Bundled assets\n\n");
    out.push_str("Generated by `cargo run -p hag-core --example make_assets`. Do not edit by hand.\n\n");
    out.push_str("- `synthetic_db.csv`: survey-coded sample of the general population.\n");
    out.push_str("- `harmonization.json`: column map and code tables for that file.\n");
    out.push_str("- `toy_corpus.jsonl`: one JSON object per post (`user_id`, `timestamp`, `text`, `theme`).\n");
    out.push_str("- `mock_table.json`: mock provider table with the topic-world oracle and corpus user profiles.\n\n");
    let _ = writeln!(
        out,
        "The database has {} rows; {} ingest and {} carry missing-value codes.\n",
        report.rows, report.ingested, report.skipped
    );
    let _ = writeln!(out, "The corpus has {CORPUS_USERS} users across the themes {}.\n", THEMES.join(", "));
    out.push_str("## Database marginals\n");
    for d in &schema.dimensions {
        let counts = label_counts(&pop, &d.id);
        let _ = writeln!(out, "\n### {}\n\n| label | count | share |\n|---|---:|---:|", d.name);
        let mut rows: Vec<_> = counts.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        for (label, n) in rows {
            let _ = writeln!(out, "| {label} | {n} | {:.3} |", *n as f64 / pop.size() as f64);
        }
    }
    out
}

/// Every asset file name with its generated content.
pub fn assets() -> Vec<(&'static str, String)> {
    vec![
        ("synthetic_db.csv", database_csv()),
        ("harmonization.json", harmonization_json()),
        ("toy_corpus.jsonl", corpus_jsonl()),
        ("mock_table.json", mock_table_json()),
        ("README.md", assets_readme()),
    ]
}

/// Analytic JSD (base 2) between the true (education, income) joint of the
/// world and the product of its marginals.
pub fn joint_vs_product_jsd(world: &World) -> f64 {
    let joint = world.joint();
    let income = world.income_marginal();
    let p: BTreeMap<String, f64> = joint.iter().map(|((e, i), p)| (format!("{e} | {i}"), *p)).collect();
    let mut q = BTreeMap::new();
    for (e, pe) in &world.education {
        for (i, pi) in &income {
            q.insert(format!("{e} | {i}"), pe * pi);
        }
    }
    let id = format!("{}+{}", dims::EDUCATION, dims::INCOME_LEVEL);
    let p = Distribution::new(id.clone(), p).expect("joint sums to one");
    let q = Distribution::new(id, q).expect("product sums to one");
    crate::pace::divergence::jsd(&p, &q).expect("same dimension")
}
