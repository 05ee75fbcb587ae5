use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hag_core::persona::{PersonaRecord, Population, PopulationMeta, Provenance};
use hag_core::synthetic::{World, WORLD_TOPIC};
use hag_core::tree::{DistributionTree, TreeMeta};

const SECOND_TOPIC: &str = "Weekend habits of city cyclists";

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets")
}

fn hag(dir: &Path, args: &[&str]) -> Output {
    hag_env(dir, args, &[])
}

fn hag_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hag"));
    cmd.current_dir(dir).args(args).env_remove("HAG_OFFLINE").env_remove("HAG_BASE_URL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Reference populations for two topics plus a config using the shipped assets.
fn experiment_dir(db: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    World::topic().population(WORLD_TOPIC, 300, 7).save(&dir.path().join("gt-a.json")).unwrap();
    World::general().population(SECOND_TOPIC, 300, 8).save(&dir.path().join("gt-b.json")).unwrap();
    let a = assets();
    let config = format!(
        r#"label = "smoke"
seed = 3
workers = 3
offline = true

[[topics]]
name = "{WORLD_TOPIC}"
gt = "gt-a.json"

[[topics]]
name = "{SECOND_TOPIC}"
gt = "gt-b.json"

[provider]
mock_table = "{mock}"

[paths]
db = "{db}"
harmonization = "{harm}"
output_dir = "runs"

[params]
n = 60
max_branches = 6
"#,
        mock = a.join("mock_table.json").display(),
        db = db.replace("$ASSETS", &a.display().to_string()),
        harm = a.join("harmonization.json").display(),
    );
    std::fs::write(dir.path().join("config.toml"), config).unwrap();
    dir
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    dirs
}

fn count_files(dir: &Path) -> usize {
    std::fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn full_run_writes_every_artifact_and_is_reproducible() {
    let dir = experiment_dir("$ASSETS/synthetic_db.csv");
    for _ in 0..2 {
        let out = hag(dir.path(), &["--config", "config.toml", "run"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let runs = run_dirs(dir.path());
    assert_eq!(runs.len(), 2);
    for run in &runs {
        assert_eq!(count_files(&run.join("populations")), 10);
        assert_eq!(count_files(&run.join("reports")), 10);
        assert_eq!(count_files(&run.join("trees")), 4);
        assert!(run.join("summary.md").exists());
        let s = summary(run);
        assert!(s["cells"].as_array().unwrap().iter().all(|c| c.get("error").is_none()), "{s}");
    }
    let a = std::fs::read(runs[0].join("summary.json")).unwrap();
    let b = std::fs::read(runs[1].join("summary.json")).unwrap();
    assert_eq!(a, b);
    for sub in ["populations", "reports", "trees"] {
        for f in std::fs::read_dir(runs[0].join(sub)).unwrap() {
            let name = f.unwrap().file_name();
            assert_eq!(
                std::fs::read(runs[0].join(sub).join(&name)).unwrap(),
                std::fs::read(runs[1].join(sub).join(&name)).unwrap(),
                "{sub}/{name:?}"
            );
        }
    }
    let shown = hag(dir.path(), &["inspect", runs[0].join("summary.json").to_str().unwrap()]);
    assert!(stdout(&shown).contains("| hag |"), "{}", stdout(&shown));
}

#[test]
fn recorded_run_replays_to_the_same_metrics() {
    let dir = experiment_dir("$ASSETS/synthetic_db.csv");
    let config = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    std::fs::write(dir.path().join("config.toml"), config.replace("[provider]\n", "[provider]\nrecord = true\n")).unwrap();
    let out = hag(dir.path(), &["--config", "config.toml", "run", "--label", "live"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let recorded = run_dirs(dir.path()).remove(0);
    assert!(count_files(&recorded.join("transcripts")) >= 3);

    let transcripts = recorded.join("transcripts");
    for _ in 0..2 {
        let out = hag(
            dir.path(),
            &["--config", "config.toml", "--provider", "replay", "--transcript", transcripts.to_str().unwrap(), "run", "--label", "replay"],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let replays: Vec<PathBuf> = run_dirs(dir.path()).into_iter().filter(|d| d.to_str().unwrap().contains("replay")).collect();
    assert_eq!(replays.len(), 2);
    let (a, b) = (summary(&recorded), summary(&replays[0]));
    assert_eq!(a["provider"], b["provider"]);
    assert_eq!(a["methods"], b["methods"]);
    assert_eq!(a["cells"], b["cells"]);
    assert_eq!(
        std::fs::read(replays[0].join("summary.json")).unwrap(),
        std::fs::read(replays[1].join("summary.json")).unwrap()
    );
}

#[test]
fn every_run_artifact_is_auditable() {
    let dir = experiment_dir("$ASSETS/synthetic_db.csv");
    let out = hag(dir.path(), &["--config", "config.toml", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = run_dirs(dir.path()).remove(0);
    for sub in ["populations", "reports", "trees"] {
        for f in std::fs::read_dir(run.join(sub)).unwrap() {
            let path = f.unwrap().path();
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            assert_eq!(v["format_version"], 1, "{path:?}");
            let (config, seed, provider) = match sub {
                "reports" => (&v["run_config"], &v["config"]["seed"], &v["provider"]),
                _ => (&v["meta"]["config"], &v["meta"]["seed"], &v["meta"]["provider"]),
            };
            assert_eq!(config["label"], "smoke", "{path:?}");
            assert_eq!(*seed, 3, "{path:?}");
            assert!(provider.is_string(), "{path:?}");
        }
    }
    let s = summary(&run);
    assert_eq!((s["format_version"].clone(), s["seed"].clone()), (1.into(), 3.into()));
    assert_eq!(s["provider"], "mock(seed=0)");
}

#[test]
fn missing_database_fails_only_the_cells_that_need_it() {
    let dir = experiment_dir("no-such-db.csv");
    let out = hag(dir.path(), &["--config", "config.toml", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let s = summary(&run_dirs(dir.path())[0]);
    for cell in s["cells"].as_array().unwrap() {
        if cell["method"] == "llm-generate" {
            assert!(cell.get("error").is_none(), "{cell}");
            assert!(cell["metrics"]["s_dist_jsd"].as_f64().unwrap() >= 0.0);
        } else {
            assert!(cell["error"].as_str().unwrap().contains("no-such-db"), "{cell}");
        }
    }
}

#[test]
fn missing_reference_population_fails_fast() {
    let dir = experiment_dir("$ASSETS/synthetic_db.csv");
    std::fs::remove_file(dir.path().join("gt-b.json")).unwrap();
    let out = hag(dir.path(), &["--config", "config.toml", "run"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn offline_mode_never_opens_a_connection() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let env = [("HAG_BASE_URL", url.as_str()), ("HAG_API_KEY", "test")];

    let flag = hag_env(dir.path(), &["--offline", "--provider", "http", "tree", "build", "--topic", WORLD_TOPIC], &env);
    assert_eq!(flag.status.code(), Some(2), "{}", stderr(&flag));
    let mut with_env = env.to_vec();
    with_env.push(("HAG_OFFLINE", "1"));
    let var = hag_env(dir.path(), &["--provider", "http", "tree", "build", "--topic", WORLD_TOPIC], &with_env);
    assert_eq!(var.status.code(), Some(2), "{}", stderr(&var));
    assert_eq!(listener.accept().map_err(|e| e.kind()).err(), Some(std::io::ErrorKind::WouldBlock));

    let mock = hag(dir.path(), &["--offline", "tree", "build", "--topic", WORLD_TOPIC]);
    assert!(mock.status.success(), "{}", stderr(&mock));
    assert!(stdout(&mock).contains("\"kind\": \"tree\""));
}

#[test]
fn inspect_renders_a_uniform_binary_tree() {
    let dir = tempfile::tempdir().unwrap();
    let half = |a: &str, b: &str| vec![(a.to_string(), 0.5), (b.to_string(), 0.5)];
    let marginals = vec![("gender".to_string(), half("Female", "Male")), ("age".to_string(), half("18-24", "65+"))];
    let tree = DistributionTree::outer_product("Uniform", &marginals, TreeMeta::default());
    tree.save(&dir.path().join("tree.json")).unwrap();
    let out = hag(dir.path(), &["inspect", "tree.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("depth 2, 6 nodes, 4 leaves"), "{text}");
    assert_eq!(text.matches("(path 0.2500)").count(), 4);
    assert_eq!(text.matches("(path 0.5000)").count(), 2);
    assert!(text.contains("\n  - age = 65+"));
}

#[test]
fn inspect_counts_population_labels() {
    let dir = tempfile::tempdir().unwrap();
    let members = (0..10)
        .map(|i| {
            let values = BTreeMap::from([
                ("gender".to_string(), if i < 7 { "Female" } else { "Male" }.to_string()),
                ("age".to_string(), if i == 0 { "Unknown" } else { "25-34" }.to_string()),
            ]);
            PersonaRecord::new(values, Provenance::Real, Some(format!("p{i}")))
        })
        .collect();
    let meta = PopulationMeta { generator: "test".into(), ..Default::default() };
    Population::new("Ten", members, meta).save(&dir.path().join("pop.json")).unwrap();
    let out = hag(dir.path(), &["inspect", "pop.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("10 members (10 real, 0 augmented)"), "{text}");
    let line = |label: &str| text.lines().find(|l| l.trim_start().starts_with(label)).unwrap().to_string();
    assert!(line("Female").ends_with(" 7"));
    assert!(line("Male").ends_with(" 3"));
    assert!(line("25-34").ends_with(" 9"));
    assert!(line("Unknown").ends_with(" 1"));
}

#[test]
fn inspect_reports_the_offset_of_a_truncated_file() {
    let dir = tempfile::tempdir().unwrap();
    let tree = DistributionTree::outer_product(
        "Cut",
        &[("gender".to_string(), vec![("Female".to_string(), 1.0)])],
        TreeMeta::default(),
    );
    let json = tree.to_json();
    let cut = &json[..json.len() / 2];
    std::fs::write(dir.path().join("cut.json"), cut).unwrap();
    let out = hag(dir.path(), &["inspect", "cut.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains(&format!("byte {}", cut.len())), "{}", stderr(&out));

    std::fs::write(dir.path().join("other.json"), "{\"kind\": \"mystery\"}").unwrap();
    let out = hag(dir.path(), &["inspect", "other.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("mystery"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hag(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(hag(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(hag(dir.path(), &["baseline", "--method", "magic", "--topic", "x"]).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), "workers = 0\n").unwrap();
    assert_eq!(hag(dir.path(), &["--config", "bad.toml", "run"]).status.code(), Some(1));
    std::fs::write(dir.path().join("typo.toml"), "wrokers = 2\n").unwrap();
    assert_eq!(hag(dir.path(), &["--config", "typo.toml", "run"]).status.code(), Some(1));
    assert_eq!(hag(dir.path(), &["run"]).status.code(), Some(1));
    assert_eq!(hag(dir.path(), &["eval", "--gen", "none.json", "--gt", "none.json"]).status.code(), Some(3));
    let no_db = hag(dir.path(), &["--offline", "baseline", "--method", "random-select", "--topic", "x"]);
    assert_eq!(no_db.status.code(), Some(3));
}

#[test]
fn single_commands_chain_from_generation_to_export() {
    let dir = tempfile::tempdir().unwrap();
    let a = assets();
    let mock = a.join("mock_table.json");
    let db = a.join("synthetic_db.csv");
    let harm = a.join("harmonization.json");
    World::topic().population(WORLD_TOPIC, 300, 7).save(&dir.path().join("gt.json")).unwrap();
    let common = ["--offline", "--mock-table", mock.to_str().unwrap(), "--seed", "5"];
    let with = |rest: &[&str]| -> Output {
        let args: Vec<&str> = common.iter().copied().chain(rest.iter().copied()).collect();
        hag(dir.path(), &args)
    };

    let out = with(&[
        "generate", "--topic", WORLD_TOPIC, "--size", "80", "--db", db.to_str().unwrap(),
        "--harmonization", harm.to_str().unwrap(), "--tree-out", "tree.json", "--out", "hag.json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let pop = Population::load(&dir.path().join("hag.json")).unwrap();
    assert_eq!(pop.size(), 80);
    assert_eq!(pop.meta.seed, 5);
    assert_eq!(pop.meta.config.as_ref().unwrap()["seed"], 5);

    let again = with(&[
        "generate", "--topic", WORLD_TOPIC, "--size", "80", "--db", db.to_str().unwrap(),
        "--harmonization", harm.to_str().unwrap(), "--tree", "tree.json", "--out", "again.json",
    ]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(Population::load(&dir.path().join("again.json")).unwrap().members, pop.members);

    let out = with(&["baseline", "--method", "llm-generate", "--topic", WORLD_TOPIC, "--size", "20", "--out", "llm.json"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = with(&["eval", "--gen", "hag.json", "--gt", "gt.json", "--judge", "mock", "--out", "report.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("ArchRel       4"), "{}", stdout(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "report");
    assert!(report["run_config"]["params"]["k"].is_number());
    assert!(report["s_dist_jsd"].as_f64().unwrap() < 0.05);

    let skipped = with(&["eval", "--gen", "llm.json", "--gt", "gt.json", "--judge", "none"]);
    assert!(skipped.status.success(), "{}", stderr(&skipped));
    let report: serde_json::Value = serde_json::from_str(&stdout(&skipped)).unwrap();
    assert!(report.get("arch_rel").is_none());

    let out = with(&["export", "embeddings", "--pop", "hag.json", "--out", "emb.jsonl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = std::fs::read_to_string(dir.path().join("emb.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 80);
}

#[test]
fn bench_build_infers_one_persona_per_user() {
    let dir = tempfile::tempdir().unwrap();
    let a = assets();
    let out = hag(
        dir.path(),
        &[
            "--offline", "--mock-table", a.join("mock_table.json").to_str().unwrap(),
            "bench", "build", "--corpus", a.join("toy_corpus.jsonl").to_str().unwrap(),
            "--theme", "remote-work", "--topic", WORLD_TOPIC, "--out", "bench.json",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let pop = Population::load(&dir.path().join("bench.json")).unwrap();
    assert!(pop.size() >= 50);
    assert_eq!(pop.meta.generator, "bench");
    assert!(stderr(&out).contains("kept"));

    let strict = hag(
        dir.path(),
        &[
            "--offline", "--mock-table", a.join("mock_table.json").to_str().unwrap(),
            "bench", "build", "--corpus", a.join("toy_corpus.jsonl").to_str().unwrap(),
            "--theme", "remote-work", "--min-tokens", "100000",
        ],
    );
    assert_eq!(strict.status.code(), Some(3));
}
