//! The `hag` command-line tool: trees, populations, benchmarks, evaluation
//! and full experiment runs.

pub mod config;
pub mod context;
pub mod error;
pub mod experiment;
pub mod inspect;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use hag_core::baselines::Method;
use hag_core::bench::{self, BenchConfig};
use hag_core::grounding::{self, GroundingConfig};
use hag_core::pace;
use hag_core::tree::{build_tree, DistributionTree};

use config::{JudgeMode, ProviderMode, RunConfig};
use context::{load_population, Context};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hag", version, about = "Grounded persona populations: build, generate, evaluate")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Refuse every network call.
    #[arg(long, global = true)]
    pub offline: bool,
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderMode>,
    /// Mock answer table (mock provider and mock judge).
    #[arg(long, global = true)]
    pub mock_table: Option<PathBuf>,
    /// Transcript to replay (replay provider) or to record into.
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    /// Dimension schema JSON; the built-in schema otherwise.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distribution trees.
    #[command(subcommand)]
    Tree(TreeCommand),
    /// Grounded generation: build (or load) a tree and instantiate it.
    Generate(GenerateArgs),
    /// Any generation method, including the baselines.
    Baseline(BaselineArgs),
    /// Reference populations from text corpora.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Score a generated population against a reference.
    Eval(EvalArgs),
    /// Every configured method on every configured topic.
    Run(RunArgs),
    /// Summarize a saved tree, population, report or run summary.
    Inspect { path: PathBuf },
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Debug, Subcommand)]
pub enum TreeCommand {
    Build {
        #[arg(long)]
        topic: String,
        #[arg(long)]
        min_path_prob: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub topic: String,
    #[arg(long)]
    pub size: Option<usize>,
    /// Persona database (CSV or JSONL).
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub harmonization: Option<PathBuf>,
    /// Existing tree to ground instead of building one.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Where to save the built tree.
    #[arg(long)]
    pub tree_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// random-select, topic-retrieval, llm-generate, hag-flat or hag.
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub topic: String,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    Build {
        /// JSONL posts: user_id, timestamp, text, theme.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        theme: String,
        /// Topic recorded on the population; defaults to the theme.
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        min_tokens: Option<usize>,
        #[arg(long)]
        max_texts: Option<usize>,
        /// Build even when too few users survive filtering.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum)]
    pub judge: Option<JudgeMode>,
    /// Archetype clusters.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Parent directory of the run folder.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExportCommand {
    /// One JSON line per member with its embedding.
    Embeddings {
        #[arg(long)]
        pop: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Cli {
    /// Configuration file, environment, then flags, in increasing precedence.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if self.offline {
            c.offline = true;
        }
        if let Some(mode) = self.provider {
            c.provider.mode = mode;
        }
        if let Some(p) = &self.mock_table {
            c.provider.mock_table = Some(p.clone());
        }
        if let Some(p) = &self.transcript {
            c.provider.transcript = Some(p.clone());
        }
        if let Some(p) = &self.schema {
            c.paths.schema = Some(p.clone());
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        match &self.command {
            Command::Generate(a) => {
                if let Some(p) = &a.harmonization {
                    c.paths.harmonization = Some(p.clone());
                }
                if let Some(n) = a.size {
                    c.params.n = n;
                }
            }
            Command::Baseline(a) => {
                if let Some(n) = a.size {
                    c.params.n = n;
                }
            }
            Command::Tree(TreeCommand::Build { min_path_prob: Some(p), .. }) => c.params.min_path_prob = *p,
            Command::Eval(a) => {
                if let Some(j) = a.judge {
                    c.judge.mode = j;
                }
                if let Some(k) = a.k {
                    c.params.k = k;
                }
            }
            Command::Run(a) => {
                if let Some(l) = &a.label {
                    c.label = l.clone();
                }
                if let Some(w) = a.workers {
                    c.workers = w;
                }
                if let Some(d) = &a.output_dir {
                    c.paths.output_dir = Some(d.clone());
                }
            }
            _ => {}
        }
        Ok(c)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
            Ok(())
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Command::Inspect { path } = &cli.command {
        return emit(None, &inspect::inspect_path(path)?);
    }
    let ctx = Context::new(cli.run_config()?)?;
    let seed = ctx.config.seed;
    match &cli.command {
        Command::Tree(TreeCommand::Build { topic, out, .. }) => {
            let model = ctx.model(ctx.command_transcript())?;
            let mut tree = build_tree(topic, &ctx.schema, &model, &ctx.params())?;
            tree.meta.seed = Some(seed);
            tree.meta.min_path_prob = Some(ctx.config.params.min_path_prob);
            tree.meta.config = Some(ctx.config.echo());
            tree.meta.transcript = ctx.command_transcript().map(|p| p.display().to_string());
            let tree = tree.prune(ctx.config.params.min_path_prob)?;
            emit(out.as_deref(), &tree.to_json())
        }
        Command::Generate(a) => {
            let db = ctx.database(a.db.as_deref())?;
            let record = ctx.command_transcript();
            let (pop, tree) = match &a.tree {
                Some(path) => {
                    let tree = DistributionTree::load(path)?.prune(ctx.config.params.min_path_prob)?;
                    let model = ctx.model(record)?;
                    let grounding = GroundingConfig {
                        augment_attempts: ctx.config.params.augment_attempts,
                        generator: Method::Hag.name().into(),
                    };
                    let mut pop = grounding::instantiate(
                        &tree,
                        &db,
                        ctx.config.params.n,
                        &model,
                        &ctx.schema,
                        &ctx.params(),
                        seed,
                        &grounding,
                    )?;
                    pop.topic = a.topic.clone();
                    pop.meta.provider.get_or_insert_with(|| ctx.fingerprint());
                    pop.meta.config = Some(ctx.config.echo());
                    (pop, None)
                }
                None => experiment::generate(&ctx, Method::Hag, &a.topic, ctx.config.params.n, seed, Some(&db), record)?,
            };
            if let (Some(tree), Some(path)) = (tree, &a.tree_out) {
                emit(Some(path), &tree.to_json())?;
            }
            emit(a.out.as_deref(), &pop.to_json())
        }
        Command::Baseline(a) => {
            let method: Method = a.method.parse().map_err(CliError::Usage)?;
            let db = if method.needs_database() { Some(ctx.database(a.db.as_deref())?) } else { None };
            let (pop, _) =
                experiment::generate(&ctx, method, &a.topic, ctx.config.params.n, seed, db.as_ref(), ctx.command_transcript())?;
            emit(a.out.as_deref(), &pop.to_json())
        }
        Command::Bench(BenchCommand::Build { corpus, theme, topic, min_tokens, max_texts, force, out }) => {
            let posts = bench::read_corpus(corpus)?;
            let mut config = BenchConfig { force: *force, ..Default::default() };
            if let Some(t) = min_tokens {
                config.policy.min_tokens = *t;
            }
            config.policy.max_texts = *max_texts;
            let client = ctx.client(ctx.command_transcript())?;
            let topic = topic.as_deref().unwrap_or(theme);
            let (mut pop, report) =
                bench::build_benchmark(&posts, theme, topic, &client, &ctx.schema, &ctx.params(), &config)?;
            pop.meta.seed = seed;
            pop.meta.config = Some(ctx.config.echo());
            eprintln!(
                "{} users seen, {} kept ({} too few texts, {} too many)",
                report.users_seen, report.users_kept, report.users_too_few, report.users_too_many
            );
            emit(out.as_deref(), &pop.to_json())
        }
        Command::Eval(a) => {
            let gen = load_population(&a.gen)?;
            let gt = load_population(&a.gt)?;
            let report = experiment::evaluate(&ctx, &gen, &gt)?;
            match &a.out {
                Some(p) => {
                    emit(Some(p), &report.to_json())?;
                    emit(None, &inspect::render_report(&report))
                }
                None => emit(None, &report.to_json()),
            }
        }
        Command::Run(_) => {
            let (dir, summary) = experiment::run_experiment(&ctx)?;
            emit(None, &experiment::summary_markdown(&summary))?;
            eprintln!("run written to {}", dir.display());
            Ok(())
        }
        Command::Export(ExportCommand::Embeddings { pop, out }) => {
            let pop = load_population(pop)?;
            let rows = pace::export_embeddings(&pop, ctx.embedder()?)?;
            let mut buf = Vec::new();
            pace::write_embeddings_jsonl(&rows, &mut buf)?;
            emit(out.as_deref(), &String::from_utf8(buf).expect("json is utf-8"))
        }
        Command::Inspect { .. } => unreachable!("handled above"),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
