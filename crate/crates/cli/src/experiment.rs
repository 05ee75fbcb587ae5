//! Method dispatch and the full topics × methods experiment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hag_core::baselines::{self, Method};
use hag_core::grounding::PersonaDatabase;
use hag_core::pace::{self, EvalReport, Judges};
use hag_core::persona::Population;
use hag_core::tree::DistributionTree;

use crate::context::{load_population, Context};
use crate::error::CliError;

/// Runs one generation method. Tree-based methods also return their tree.
pub fn generate(
    ctx: &Context,
    method: Method,
    topic: &str,
    n: usize,
    seed: u64,
    db: Option<&PersonaDatabase>,
    record: Option<&Path>,
) -> Result<(Population, Option<DistributionTree>), CliError> {
    let need_db = || {
        db.ok_or_else(|| CliError::Data(format!("method {} needs a persona database (paths.db or --db)", method.name())))
    };
    let echo = ctx.config.echo();
    let (mut pop, mut tree) = match method {
        Method::RandomSelect => (baselines::random_select(need_db()?, topic, n, seed)?, None),
        Method::TopicRetrieval => (baselines::topic_retrieval(need_db()?, topic, n, ctx.embedder()?)?, None),
        Method::LlmGenerate => {
            let model = ctx.model(record)?;
            let pop = baselines::llm_generate(&model, topic, n, &ctx.schema, &ctx.params(), &ctx.llm_config(), seed)?;
            (pop, None)
        }
        Method::HagFlat | Method::Hag => {
            let db = need_db()?;
            let model = ctx.model(record)?;
            let config = ctx.hag_config(method.name());
            let (tree, pop) = if method == Method::Hag {
                baselines::hag(&model, topic, n, &ctx.schema, db, &config, seed)?
            } else {
                baselines::hag_flat(&model, topic, n, &ctx.schema, db, &config, seed)?
            };
            (pop, Some(tree))
        }
    };
    pop.meta.seed = seed;
    pop.meta.provider.get_or_insert_with(|| ctx.fingerprint());
    pop.meta.config = Some(echo.clone());
    if let Some(t) = tree.as_mut() {
        t.meta.seed = Some(seed);
        t.meta.min_path_prob = Some(ctx.config.params.min_path_prob);
        t.meta.config = Some(echo);
        t.meta.transcript = record.map(|p| p.display().to_string());
    }
    Ok((pop, tree))
}

/// Evaluates `gen` against `gt` with the configured judges.
pub fn evaluate(ctx: &Context, gen: &Population, gt: &Population) -> Result<EvalReport, CliError> {
    let config = ctx.eval_config(ctx.config.seed);
    let client = if config.offline { None } else { ctx.judge_client()? };
    let judges = match client {
        Some(client) => Some(Judges { client, embedder: ctx.embedder()? }),
        None => None,
    };
    let mut report = pace::evaluate(gen, gt, &ctx.schema, &config, judges.as_ref())?;
    report.run_config = Some(ctx.config.echo());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub s_dist_jsd: f64,
    pub s_dist_kl: f64,
    pub div_err: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ind_con: Option<f64>,
}

impl From<&EvalReport> for CellMetrics {
    fn from(r: &EvalReport) -> Self {
        Self {
            s_dist_jsd: r.s_dist_jsd,
            s_dist_kl: r.s_dist_kl,
            div_err: r.div_err,
            arch_rel: r.arch_rel.as_ref().map(|a| f64::from(a.score)),
            ind_con: r.ind_con.as_ref().map(|i| i.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub topic: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CellMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub cells_ok: usize,
    pub cells_failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_dist_jsd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_dist_kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub div_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ind_con: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: u32,
    pub kind: String,
    pub label: String,
    pub seed: u64,
    pub provider: String,
    pub topics: Vec<String>,
    pub methods: Vec<MethodSummary>,
    pub cells: Vec<CellResult>,
    pub config: serde_json::Value,
}

impl Summary {
    pub const KIND: &'static str = "summary";
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(methods: &[Method], cells: &[CellResult]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|m| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.method == m.name()).collect();
            let metric = |f: fn(&CellMetrics) -> Option<f64>| mean(mine.iter().map(|c| c.metrics.as_ref().and_then(f)));
            MethodSummary {
                method: m.name().into(),
                cells_ok: mine.iter().filter(|c| c.error.is_none()).count(),
                cells_failed: mine.iter().filter(|c| c.error.is_some()).count(),
                s_dist_jsd: metric(|x| Some(x.s_dist_jsd)),
                s_dist_kl: metric(|x| Some(x.s_dist_kl)),
                div_err: metric(|x| Some(x.div_err)),
                arch_rel: metric(|x| x.arch_rel),
                ind_con: metric(|x| x.ind_con),
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

pub fn summary_markdown(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Run `{}`\n", s.label);
    let _ = writeln!(out, "Seed {}, provider {}, topics: {}\n", s.seed, s.provider, s.topics.join("; "));
    let _ = writeln!(out, "| method | ok | failed | S_dist (JSD) | S_dist (KL) | DivErr | ArchRel | IndCon |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    for m in &s.methods {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            m.method,
            m.cells_ok,
            m.cells_failed,
            fmt_opt(m.s_dist_jsd, 4),
            fmt_opt(m.s_dist_kl, 4),
            fmt_opt(m.div_err, 4),
            fmt_opt(m.arch_rel, 2),
            fmt_opt(m.ind_con, 2)
        );
    }
    let failed: Vec<&CellResult> = s.cells.iter().filter(|c| c.error.is_some()).collect();
    if !failed.is_empty() {
        let _ = writeln!(out, "\n## Failed cells\n");
        for c in failed {
            let _ = writeln!(out, "- {} / {}: {}", c.topic, c.method, c.error.as_deref().unwrap_or(""));
        }
    }
    out
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let out = out.trim_matches('-');
    out.chars().take(40).collect::<String>().trim_end_matches('-').to_string()
}

fn run_dir(root: &Path, label: &str) -> Result<PathBuf, CliError> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stamp}-{}", slug(label));
    let mut dir = root.join(&base);
    let mut k = 1;
    while dir.exists() {
        k += 1;
        dir = root.join(format!("{base}-{k}"));
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

struct Cell<'a> {
    index: usize,
    topic: &'a str,
    gt: &'a Population,
    method: Method,
}

fn run_cell(ctx: &Context, dir: &Path, db: &Result<PersonaDatabase, String>, cell: &Cell) -> CellResult {
    let stem = format!("t{}-{}-{}", cell.index, slug(cell.topic), cell.method.name());
    let mut result = CellResult {
        topic: cell.topic.into(),
        method: cell.method.name().into(),
        population: None,
        tree: None,
        report: None,
        metrics: None,
        judge_error: None,
        error: None,
    };
    let outcome = (|| -> Result<(), CliError> {
        let db = match (db, cell.method.needs_database()) {
            (Ok(db), true) => Some(db),
            (Err(e), true) => return Err(CliError::Data(e.clone())),
            _ => None,
        };
        let record = ctx.config.provider.record.then(|| dir.join("transcripts").join(format!("{stem}.jsonl")));
        let (pop, tree) =
            generate(ctx, cell.method, cell.topic, ctx.config.params.n, ctx.config.seed, db, record.as_deref())?;
        if let Some(tree) = tree {
            let rel = format!("trees/{stem}.json");
            tree.save(&dir.join(&rel))?;
            result.tree = Some(rel);
        }
        let rel = format!("populations/{stem}.json");
        pop.save(&dir.join(&rel))?;
        result.population = Some(rel);
        let report = evaluate(ctx, &pop, cell.gt)?;
        let rel = format!("reports/{stem}.json");
        report.save(&dir.join(&rel))?;
        result.report = Some(rel);
        result.metrics = Some(CellMetrics::from(&report));
        result.judge_error = report.judge_error.clone();
        Ok(())
    })();
    if let Err(e) = outcome {
        result.error = Some(e.to_string());
    }
    result
}

/// Every configured method on every topic. Cell failures are recorded in the
/// summary; configuration problems and unreadable references fail the run.
pub fn run_experiment(ctx: &Context) -> Result<(PathBuf, Summary), CliError> {
    let config = &ctx.config;
    let methods = config.methods()?;
    if config.topics.is_empty() {
        return Err(CliError::Usage("invalid config: no topics configured".into()));
    }
    if methods.is_empty() {
        return Err(CliError::Usage("invalid config: no methods configured".into()));
    }
    let gts: Vec<Population> = config.topics.iter().map(|t| load_population(&t.gt)).collect::<Result<_, _>>()?;
    let db = match &config.paths.db {
        Some(_) => ctx.database(None).map_err(|e| e.to_string()),
        None => Err("no persona database configured (paths.db)".to_string()),
    };
    let root = config.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let dir = run_dir(&root, &config.label)?;
    for sub in ["trees", "populations", "reports"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    if config.provider.record {
        std::fs::create_dir_all(dir.join("transcripts"))?;
    }

    let cells: Vec<Cell> = config
        .topics
        .iter()
        .zip(&gts)
        .enumerate()
        .flat_map(|(index, (t, gt))| methods.iter().map(move |&method| Cell { index, topic: &t.name, gt, method }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let results: Vec<CellResult> = pool.install(|| cells.par_iter().map(|c| run_cell(ctx, &dir, &db, c)).collect());

    let summary = Summary {
        format_version: 1,
        kind: Summary::KIND.into(),
        label: config.label.clone(),
        seed: config.seed,
        provider: ctx.fingerprint(),
        topics: config.topics.iter().map(|t| t.name.clone()).collect(),
        methods: summarize(&methods, &results),
        cells: results,
        config: config.echo(),
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    std::fs::write(dir.join("summary.md"), summary_markdown(&summary))?;
    Ok((dir, summary))
}
