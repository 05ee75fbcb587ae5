//! Human-readable rendering of saved artifacts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use hag_core::pace::EvalReport;
use hag_core::persona::{label_counts, Population, Provenance, UNKNOWN};
use hag_core::tree::{DistributionTree, TreeNode};

use crate::error::CliError;
use crate::experiment::{summary_markdown, Summary};

/// Byte offset of a 1-based line/column position, clamped to the text.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn inspect_path(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    inspect_text(&text)
}

pub fn inspect_text(text: &str) -> Result<String, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::UnknownArtifactType {
        offset: if e.is_eof() { text.len() } else { byte_offset(text, e.line(), e.column()) },
        reason: e.to_string(),
    })?;
    let kind = value.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    match kind {
        DistributionTree::KIND => Ok(render_tree(&DistributionTree::from_json(text)?)),
        Population::KIND => Ok(render_population(&Population::from_json(text)?)),
        EvalReport::KIND => Ok(render_report(&EvalReport::from_json(text)?)),
        Summary::KIND => {
            let s: Summary = serde_json::from_value(value).map_err(CliError::data)?;
            Ok(summary_markdown(&s))
        }
        "" => Err(CliError::UnknownArtifactType { offset: 0, reason: "no `kind` field".into() }),
        other => Err(CliError::UnknownArtifactType { offset: 0, reason: format!("unsupported kind `{other}`") }),
    }
}

fn render_nodes(out: &mut String, nodes: &[TreeNode], depth: usize, path_prob: f64) {
    for n in nodes {
        let p = path_prob * n.weight;
        let _ = writeln!(out, "{}- {} = {}  {:.4}  (path {:.4})", "  ".repeat(depth), n.dimension, n.label, n.weight, p);
        render_nodes(out, &n.children, depth + 1, p);
    }
}

pub fn render_tree(tree: &DistributionTree) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tree: {}", tree.topic);
    let _ = writeln!(
        out,
        "builder {}, provider {}, depth {}, {} nodes, {} leaves",
        if tree.meta.builder.is_empty() { "-" } else { &tree.meta.builder },
        tree.meta.provider,
        tree.depth(),
        tree.node_count(),
        tree.enumerate_leaves().len()
    );
    let _ = writeln!(out, "dimensions: {}", tree.dim_sequence.join(" > "));
    render_nodes(&mut out, &tree.children, 0, 1.0);
    out
}

pub fn render_population(pop: &Population) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "population: {}", pop.topic);
    let _ = writeln!(
        out,
        "generator {}, seed {}, {} members ({} real, {} augmented)",
        pop.meta.generator,
        pop.meta.seed,
        pop.size(),
        pop.count_provenance(Provenance::Real),
        pop.count_provenance(Provenance::Augmented)
    );
    let dims: BTreeSet<&str> = pop.members.iter().flat_map(|m| m.values.keys().map(String::as_str)).collect();
    for d in dims {
        let counts = label_counts(pop, d);
        let unknown = pop.members.iter().filter(|m| m.get(d) == Some(UNKNOWN)).count();
        let width = counts.keys().map(|l| l.chars().count()).max().unwrap_or(0).max(UNKNOWN.len());
        let _ = writeln!(out, "\n{d}");
        for (label, c) in &counts {
            let _ = writeln!(out, "  {label:<width$}  {c:>5}");
        }
        if unknown > 0 {
            let _ = writeln!(out, "  {UNKNOWN:<width$}  {unknown:>5}");
        }
    }
    out
}

pub fn render_report(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "report: {}", r.topic);
    let _ = writeln!(out, "generator {} ({}) vs reference {} ({})", r.generator, r.gen_size, r.reference, r.gt_size);
    let _ = writeln!(out, "\n{:<24} {:>10} {:>10} {:>10} {:>10}", "dimension", "JSD", "KL", "Gini gen", "Gini ref");
    for d in &r.dimensions {
        let g = |m: &std::collections::BTreeMap<String, f64>| m.get(d).map_or("-".into(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "{:<24} {:>10} {:>10} {:>10} {:>10}", d, g(&r.jsd), g(&r.kl), g(&r.gini_gen), g(&r.gini_gt));
    }
    if !r.excluded.is_empty() {
        let _ = writeln!(out, "excluded: {}", r.excluded.join(", "));
    }
    let _ = writeln!(out, "\nS_dist (JSD)  {:.4}", r.s_dist_jsd);
    let _ = writeln!(out, "S_dist (KL)   {:.4}", r.s_dist_kl);
    let _ = writeln!(out, "DivErr        {:.4}", r.div_err);
    match &r.arch_rel {
        Some(a) => {
            let _ = writeln!(out, "ArchRel       {}", a.score);
        }
        None => {
            let _ = writeln!(out, "ArchRel       -");
        }
    }
    match &r.ind_con {
        Some(i) => {
            let _ = writeln!(out, "IndCon        {:.2} over {} members", i.mean, i.sampled.len());
        }
        None => {
            let _ = writeln!(out, "IndCon        -");
        }
    }
    if let Some(e) = &r.judge_error {
        let _ = writeln!(out, "judge error: {e}");
    }
    out
}
