//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Runs entirely offline.
// NaN must fail a criterion, so conditions are written as plain comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use hag_core::baselines::{hag, hag_flat, random_select, HagConfig};
use hag_core::bench::{build_benchmark, filter_corpus, read_corpus, BenchConfig, BenchError, CorpusPost, FilterPolicy};
use hag_core::grounding::{allocate_counts, instantiate, GroundingConfig, Harmonization, PersonaDatabase};
use hag_core::pace::divergence::{gini_simpson, jsd, joint_distribution, kl};
use hag_core::pace::{adaptive_sample_size, evaluate, EvalConfig};
use hag_core::persona::{dims, DimensionSchema, Distribution, PersonaVector, Population, Provenance};
use hag_core::provider::chat::LlmClient;
use hag_core::provider::http::{self, HttpBackend, HttpConfig};
use hag_core::provider::transcript::{RecordingBackend, ReplayBackend};
use hag_core::provider::{ChatBackend, MockBackend, MockTable, ProviderParams, WorldModel};
use hag_core::synthetic::{general_database, joint_vs_product_jsd, World, WORLD_TOPIC};
use hag_core::tree::{build_tree, DistributionTree, LeafPersona, TreeNode};

// Pinned tolerances.
const METRIC_TOLERANCE: f64 = 1e-9;
const SIBLING_TOLERANCE: f64 = 1e-9;
const LEAF_MASS_TOLERANCE: f64 = 1e-6;
const HAG_JOINT_MAX: f64 = 0.05;
const FLAT_JOINT_MIN: f64 = 0.15;
const CRIT1_BUDGET: Duration = Duration::from_secs(1);
const CRIT2_BUDGET: Duration = Duration::from_secs(10);
const CRIT6_BUDGET: Duration = Duration::from_secs(30);

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

fn bundled_db(schema: &DimensionSchema) -> PersonaDatabase {
    let h = Harmonization::load(&asset("harmonization.json")).expect("bundled harmonization");
    PersonaDatabase::ingest(&asset("synthetic_db.csv"), schema, &h).expect("bundled database")
}

fn mock_model(table: MockTable, seed: u64) -> WorldModel {
    WorldModel::new(Arc::new(MockBackend::new(table, seed)))
}

fn criterion_1() -> Outcome {
    let expected = [
        (20, 20),
        (30, 30),
        (31, 30),
        (100, 50),
        (101, 50),
        (500, 81),
        (501, 81),
        (1000, 88),
        (1001, 88),
        (2000, 92),
    ];
    let start = Instant::now();
    for (m, n) in expected {
        let got = adaptive_sample_size(m, 1.96, 1.0, 0.2);
        ensure!(got == n, "M={m}: expected {n}, got {got}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < CRIT1_BUDGET, "took {elapsed:?}");
    Ok(format!("10/10 rows exact in {elapsed:?}"))
}

// Oracles written independently of the library: JSD through the entropy
// identity, KL and Gini-Simpson by direct summation.
fn entropy2(p: &[f64]) -> f64 {
    p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).sum::<f64>() / std::f64::consts::LN_2
}

fn oracle_jsd(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    entropy2(&m) - 0.5 * entropy2(p) - 0.5 * entropy2(q)
}

fn oracle_kl(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let k = p.len() as f64;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        if *a > 0.0 {
            let smoothed = (b + eps) / (1.0 + eps * k);
            total += a * (a / smoothed).ln();
        }
    }
    (total / std::f64::consts::LN_2).max(0.0)
}

fn oracle_gini(p: &[f64]) -> f64 {
    1.0 - p.iter().map(|x| x * x).sum::<f64>()
}

fn random_distribution(rng: &mut ChaCha8Rng) -> BTreeMap<String, f64> {
    let size = rng.random_range(1..=10);
    let mut labels: Vec<usize> = (0..10).collect();
    for i in 0..size {
        let j = rng.random_range(i..10);
        labels.swap(i, j);
    }
    let raw: Vec<f64> = (0..size).map(|_| rng.random_range(0.001..1.0)).collect();
    let total: f64 = raw.iter().sum();
    labels[..size].iter().zip(raw).map(|(l, w)| (format!("c{l}"), w / total)).collect()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for pair in 0..1000 {
        let (pm, qm) = (random_distribution(&mut rng), random_distribution(&mut rng));
        let union: BTreeSet<&String> = pm.keys().chain(qm.keys()).collect();
        let pv: Vec<f64> = union.iter().map(|l| pm.get(*l).copied().unwrap_or(0.0)).collect();
        let qv: Vec<f64> = union.iter().map(|l| qm.get(*l).copied().unwrap_or(0.0)).collect();
        let p = Distribution::new("d", pm.clone()).map_err(|e| e.to_string())?;
        let q = Distribution::new("d", qm.clone()).map_err(|e| e.to_string())?;
        let j = jsd(&p, &q).map_err(|e| e.to_string())?;
        let j_rev = jsd(&q, &p).map_err(|e| e.to_string())?;
        ensure!(j == j_rev, "pair {pair}: JSD asymmetric ({j} vs {j_rev})");
        ensure!((0.0..=1.0).contains(&j), "pair {pair}: JSD {j} out of [0,1]");
        let checks = [
            ("JSD", j, oracle_jsd(&pv, &qv)),
            ("KL", kl(&p, &q, eps).map_err(|e| e.to_string())?, oracle_kl(&pv, &qv, eps)),
            ("Gini(P)", gini_simpson(&p), oracle_gini(&pv)),
            ("Gini(Q)", gini_simpson(&q), oracle_gini(&qv)),
        ];
        for (name, got, want) in checks {
            let diff = (got - want).abs();
            worst = worst.max(diff);
            ensure!(diff <= METRIC_TOLERANCE, "pair {pair}: {name} {got} vs oracle {want}");
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < CRIT2_BUDGET, "took {elapsed:?}");
    Ok(format!("1000 pairs, max |lib - oracle| = {worst:.2e}, JSD symmetric and bounded, {elapsed:?}"))
}

fn random_leaves(rng: &mut ChaCha8Rng) -> Vec<LeafPersona> {
    let count = rng.random_range(1..=60);
    let tied = rng.random_bool(0.3);
    (0..count)
        .map(|i| LeafPersona {
            persona: PersonaVector::from_pairs([("d", format!("v{i:02}"))]),
            path_prob: if tied { rng.random_range(1..=3) as f64 } else { rng.random_range(1e-4..1.0) },
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let run = || -> Result<Vec<u8>, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hash = Sha256::new();
        for inst in 0..1000 {
            let leaves = random_leaves(&mut rng);
            let n = rng.random_range(0..=10_000);
            let counts = allocate_counts(&leaves, n);
            let total_w: f64 = leaves.iter().map(|l| l.path_prob).sum();
            ensure!(counts.iter().sum::<usize>() == n, "instance {inst}: counts do not sum to {n}");
            for (l, c) in leaves.iter().zip(&counts) {
                let quota = n as f64 * l.path_prob / total_w;
                ensure!((*c as f64 - quota).abs() < 1.0, "instance {inst}: count {c} vs quota {quota}");
            }
            for c in &counts {
                hash.update(c.to_le_bytes());
            }
        }
        Ok(hash.finalize().to_vec())
    };
    let first = run()?;
    let second = run()?;
    ensure!(first == second, "allocation hash differs between runs");
    Ok(format!("1000 instances exact, |n - N*W| < 1, run hash {}", hex::encode(&first[..8])))
}

fn check_siblings(nodes: &[TreeNode], path: &str) -> Result<(), String> {
    if nodes.is_empty() {
        return Ok(());
    }
    let sum: f64 = nodes.iter().map(|n| n.weight).sum();
    ensure!((sum - 1.0).abs() <= SIBLING_TOLERANCE, "siblings under [{path}] sum to {sum}");
    for n in nodes {
        check_siblings(&n.children, &format!("{path}/{}", n.label))?;
    }
    Ok(())
}

fn criterion_4() -> Outcome {
    let schema = DimensionSchema::default();
    let params = ProviderParams::default();
    let mut leaves_total = 0;
    let mut deepest = 0;
    for seed in 0..100u64 {
        let topic = format!("Random topic {seed}");
        let tree = build_tree(&topic, &schema, &mock_model(MockTable::default(), seed), &params)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(tree.depth() <= 5, "seed {seed}: depth {}", tree.depth());
        check_siblings(&tree.children, "").map_err(|e| format!("seed {seed}: {e}"))?;
        let leaves = tree.enumerate_leaves();
        ensure!(leaves.iter().all(|l| l.persona.len() == tree.depth()), "seed {seed}: ragged leaves");
        let mass: f64 = leaves.iter().map(|l| l.path_prob).sum();
        ensure!((mass - 1.0).abs() <= LEAF_MASS_TOLERANCE, "seed {seed}: leaf mass {mass}");
        ensure!(max_branching(&tree.children) <= 5, "seed {seed}: branching above 5");
        leaves_total += leaves.len();
        deepest = deepest.max(tree.depth());
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut identical = 0;
    for seed in [5u64, 17, 42] {
        let transcript = dir.path().join(format!("transcript-{seed}.jsonl"));
        let topic = format!("Replay topic {seed}");
        let inner: Arc<dyn ChatBackend> = Arc::new(MockBackend::new(MockTable::default(), seed));
        let recording = RecordingBackend::new(inner, &transcript).map_err(|e| e.to_string())?;
        let original = build_tree(&topic, &schema, &WorldModel::new(Arc::new(recording)), &params)
            .map_err(|e| e.to_string())?;
        let replay = ReplayBackend::load(&transcript).map_err(|e| e.to_string())?;
        let rebuilt = build_tree(&topic, &schema, &WorldModel::new(Arc::new(replay)), &params)
            .map_err(|e| format!("replay of seed {seed}: {e}"))?;
        ensure!(original.to_json() == rebuilt.to_json(), "replayed tree for seed {seed} differs");
        identical += 1;
    }
    Ok(format!(
        "100 trees ({leaves_total} leaves, max depth {deepest}) within tolerance; {identical}/3 replays byte-identical"
    ))
}

fn max_branching(nodes: &[TreeNode]) -> usize {
    nodes.iter().map(|n| max_branching(&n.children)).max().unwrap_or(0).max(nodes.len())
}

/// Leaf persona, target count, real records available, allocated members.
type LeafSlice<'a> = (PersonaVector, usize, usize, &'a [hag_core::persona::PersonaRecord]);

/// Members of `pop` grouped by the leaf they were allocated to.
fn leaf_slices(pop: &Population) -> Result<Vec<LeafSlice<'_>>, String> {
    let allocation = pop.meta.extra.get("allocation").ok_or("population has no allocation report")?;
    let mut out = Vec::new();
    let mut offset = 0;
    for entry in allocation.as_array().ok_or("allocation is not a list")? {
        let persona: PersonaVector =
            serde_json::from_value(entry["persona"].clone()).map_err(|e| format!("allocation persona: {e}"))?;
        let target = entry["target"].as_u64().ok_or("allocation target")? as usize;
        let available = entry["available"].as_u64().ok_or("allocation available")? as usize;
        out.push((persona, target, available, &pop.members[offset..offset + target]));
        offset += target;
    }
    ensure!(offset == pop.size(), "allocation covers {offset} of {} members", pop.size());
    Ok(out)
}

fn criterion_5() -> Outcome {
    let schema = DimensionSchema::default();
    // the general population spreads over all six education levels
    let params = ProviderParams { max_branches: 6, ..ProviderParams::default() };
    let db = bundled_db(&schema);
    let topic = "General survey audience";
    let model = mock_model(World::general().oracle_table(topic), 0);
    let tree = build_tree(topic, &schema, &model, &params).map_err(|e| e.to_string())?;
    let grounding = GroundingConfig::default();
    let n = 500;

    // (a) surplus database
    let pop = instantiate(&tree, &db, n, &model, &schema, &params, 1, &grounding).map_err(|e| e.to_string())?;
    ensure!(pop.size() == n, "(a) size {}", pop.size());
    ensure!(pop.count_provenance(Provenance::Real) == n, "(a) population is not all Real");
    let joint = joint_distribution(&pop, &tree.dim_sequence).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for leaf in tree.enumerate_leaves() {
        let cell = n as f64 * joint.prob(&leaf.persona.labels().join(" | "));
        worst = worst.max((cell - n as f64 * leaf.path_prob).abs());
    }
    ensure!(worst < 1.0, "(a) cell deviation {worst}");

    // (b) empty database
    let empty = PersonaDatabase::from_records(Vec::new(), &schema).map_err(|e| e.to_string())?;
    let pop = instantiate(&tree, &empty, n, &model, &schema, &params, 1, &grounding).map_err(|e| e.to_string())?;
    ensure!(pop.count_provenance(Provenance::Augmented) == n, "(b) population is not all Augmented");
    for (persona, _, _, members) in leaf_slices(&pop)? {
        ensure!(members.iter().all(|m| m.matches(&persona)), "(b) record off its leaf [{persona}]");
    }

    // (c) mixed database: Postgraduate coverage cut to a handful of records
    let mut kept = 0;
    let records: Vec<_> = db
        .records()
        .iter()
        .filter(|r| {
            if r.get(dims::EDUCATION) != Some("Postgraduate") {
                return true;
            }
            kept += 1;
            kept <= 6
        })
        .cloned()
        .collect();
    let mixed = PersonaDatabase::from_records(records.clone(), &schema).map_err(|e| e.to_string())?;
    let pop = instantiate(&tree, &mixed, n, &model, &schema, &params, 1, &grounding).map_err(|e| e.to_string())?;
    let mut misses = 0;
    for (persona, target, available, members) in leaf_slices(&pop)? {
        let m = records.iter().filter(|r| r.matches(&persona)).count();
        ensure!(m == available, "(c) reported availability {available} for [{persona}], counted {m}");
        let augmented = members.iter().filter(|r| r.provenance == Provenance::Augmented).count();
        ensure!(augmented == target.saturating_sub(m), "(c) [{persona}] augmented {augmented}, n={target}, m={m}");
        ensure!(members.iter().all(|r| r.matches(&persona)), "(c) record off its leaf [{persona}]");
        misses += usize::from(target > m);
    }
    ensure!(misses > 0, "(c) no leaf needed augmentation");
    Ok(format!("(a) all Real, max cell deviation {worst:.3}; (b) all Augmented on-leaf; (c) {misses} MISS leaves exact"))
}

struct WorldRun {
    gt: Population,
    hag: Population,
    flat: Population,
    random: Population,
    hag_tree: DistributionTree,
}

fn world_run() -> Result<WorldRun, String> {
    let schema = DimensionSchema::default();
    let world = World::topic();
    let gt = world.population(WORLD_TOPIC, 2000, 7);
    let db = general_database(40_000, 11, &schema).map_err(|e| e.to_string())?;
    let model = mock_model(world.oracle_table(WORLD_TOPIC), 0);
    let config = HagConfig::default();
    let (hag_tree, hag) = hag(&model, WORLD_TOPIC, 2000, &schema, &db, &config, 1).map_err(|e| e.to_string())?;
    let (_, flat) = hag_flat(&model, WORLD_TOPIC, 2000, &schema, &db, &config, 1).map_err(|e| e.to_string())?;
    let random = random_select(&db, WORLD_TOPIC, 2000, 1).map_err(|e| e.to_string())?;
    Ok(WorldRun { gt, hag, flat, random, hag_tree })
}

fn criterion_6(run: &WorldRun, elapsed: Duration) -> Outcome {
    let analytic = joint_vs_product_jsd(&World::topic());
    ensure!(analytic > FLAT_JOINT_MIN, "analytic outer-product gap {analytic} is not above {FLAT_JOINT_MIN}");
    let dims = run.hag_tree.dim_sequence.clone();
    ensure!(dims == [dims::EDUCATION, dims::INCOME_LEVEL], "unexpected dim_sequence {dims:?}");
    let gt = joint_distribution(&run.gt, &dims).map_err(|e| e.to_string())?;
    let joint_jsd = |p: &Population| -> Result<f64, String> {
        jsd(&joint_distribution(p, &dims).map_err(|e| e.to_string())?, &gt).map_err(|e| e.to_string())
    };
    let h = joint_jsd(&run.hag)?;
    let f = joint_jsd(&run.flat)?;
    ensure!(h < HAG_JOINT_MAX, "HAG joint JSD {h:.4} is not below {HAG_JOINT_MAX}");
    ensure!(f > FLAT_JOINT_MIN, "HAG-Flat joint JSD {f:.4} is not above {FLAT_JOINT_MIN}");
    ensure!(elapsed < CRIT6_BUDGET, "took {elapsed:?}");
    Ok(format!("joint JSD HAG {h:.4} < {HAG_JOINT_MAX}, HAG-Flat {f:.4} > {FLAT_JOINT_MIN} (analytic {analytic:.4}), {elapsed:?}"))
}

fn criterion_7(run: &WorldRun) -> Outcome {
    let schema = DimensionSchema::default();
    let config = EvalConfig::default();
    let s = |p: &Population| evaluate(p, &run.gt, &schema, &config, None).map(|r| r.s_dist_jsd).map_err(|e| e.to_string());
    let (h, f, r) = (s(&run.hag)?, s(&run.flat)?, s(&run.random)?);
    ensure!(h < f && f < r, "ordering violated: HAG {h:.4}, HAG-Flat {f:.4}, RandomSelect {r:.4}");
    Ok(format!("S_dist HAG {h:.4} < HAG-Flat {f:.4} < RandomSelect {r:.4}"))
}

fn file_hash(path: &Path) -> Result<String, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn long_post(user: String, tokens: usize) -> CorpusPost {
    CorpusPost {
        user_id: user,
        timestamp: "2024-05-01".into(),
        text: vec!["token"; tokens].join(" "),
        theme: "t".into(),
    }
}

fn criterion_8() -> Outcome {
    let schema = DimensionSchema::default();
    let params = ProviderParams::default();
    let posts = read_corpus(&asset("toy_corpus.jsonl")).map_err(|e| e.to_string())?;
    let table = MockTable::load(&asset("mock_table.json")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    let mut size = 0;
    for run in 0..2 {
        let client = LlmClient::new(Arc::new(MockBackend::new(table.clone(), 0)));
        let (pop, _) = build_benchmark(&posts, "remote-work", WORLD_TOPIC, &client, &schema, &params, &BenchConfig::default())
            .map_err(|e| e.to_string())?;
        ensure!(pop.validate(&schema).is_empty(), "benchmark population fails validation");
        let path = dir.path().join(format!("gt-{run}.json"));
        pop.save(&path).map_err(|e| e.to_string())?;
        hashes.push(file_hash(&path)?);
        size = pop.size();
    }
    ensure!(hashes[0] == hashes[1], "benchmark files differ between runs");

    let policy = FilterPolicy::default();
    let (kept, _) = filter_corpus(&[long_post("a".into(), 14)], None, &policy).map_err(|e| e.to_string())?;
    ensure!(kept.is_empty(), "14-token text survived");
    let (kept, _) = filter_corpus(&[long_post("a".into(), 15)], None, &policy).map_err(|e| e.to_string())?;
    ensure!(kept.len() == 1, "15-token text dropped");

    let client = LlmClient::new(Arc::new(MockBackend::new(MockTable::default(), 0)));
    let corpus = |users: usize| (0..users).map(|u| long_post(format!("u{u:02}"), 20)).collect::<Vec<_>>();
    let config = BenchConfig::default();
    match build_benchmark(&corpus(49), "t", "topic", &client, &schema, &params, &config) {
        Err(BenchError::InsufficientVolume { users: 49 }) => {}
        other => return Err(format!("49 users: expected InsufficientVolume, got {:?}", other.map(|(p, _)| p.size()))),
    }
    let (pop, _) = build_benchmark(&corpus(50), "t", "topic", &client, &schema, &params, &config).map_err(|e| e.to_string())?;
    ensure!(pop.size() == 50, "50 users gave {} personas", pop.size());
    let forced = BenchConfig { force: true, ..BenchConfig::default() };
    let (pop, _) = build_benchmark(&corpus(49), "t", "topic", &client, &schema, &params, &forced).map_err(|e| e.to_string())?;
    ensure!(pop.size() == 49, "forced 49 users gave {} personas", pop.size());
    Ok(format!("{size}-member GT identical across runs (sha256 {}); 14/15-token and 49/50-user boundaries hold", &hashes[0][..12]))
}

fn criterion_9() -> Outcome {
    ensure!(http::is_offline(), "offline mode was not active");
    ensure!(http::network_attempts() == 0, "{} network requests were attempted", http::network_attempts());
    let listener = std::net::TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    listener.set_nonblocking(true).map_err(|e| e.to_string())?;
    let config = HttpConfig {
        base_url: format!("http://{}", listener.local_addr().map_err(|e| e.to_string())?),
        ..HttpConfig::default()
    };
    ensure!(HttpBackend::new(config.clone()).is_err(), "HTTP backend constructed while offline");
    ensure!(hag_core::embed::HttpEmbedder::new(config).is_err(), "HTTP embedder constructed while offline");
    ensure!(listener.accept().is_err(), "a connection reached the local listener");
    ensure!(http::network_attempts() == 0, "network requests were attempted");
    Ok("criteria 1-8 ran offline with 0 network attempts; HTTP clients refuse to start".into())
}

fn main() {
    http::set_offline(true);
    let mut results: Vec<(u32, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
    ];
    let start = Instant::now();
    match world_run() {
        Ok(run) => {
            let elapsed = start.elapsed();
            results.push((6, criterion_6(&run, elapsed)));
            results.push((7, criterion_7(&run)));
        }
        Err(e) => {
            results.push((6, Err(format!("synthetic world run failed: {e}"))));
            results.push((7, Err(format!("synthetic world run failed: {e}"))));
        }
    }
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));

    let mut failed = 0;
    for (n, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("criterion {n}: FAIL: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
