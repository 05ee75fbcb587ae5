//! Topic-adaptive demographic distribution trees.
//!
//! The topic is a weightless virtual root; layer `l` holds the values of the
//! `l`-th prioritized dimension, each weighted conditionally on its ancestors.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{AttributeValue, DimensionSchema, PersonaVector, FORMAT_VERSION};
use crate::provider::{KnowledgeProvider, ProviderError, ProviderParams};

/// Tolerance on each sibling group's weight sum.
pub const SIBLING_TOLERANCE: f64 = 1e-9;
/// Tolerance on the total leaf mass.
pub const MASS_TOLERANCE: f64 = 1e-6;
/// Depth beyond which path products are accumulated in log space.
const LOG_SPACE_DEPTH: usize = 8;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("topic is empty")]
    EmptyTopic,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("expanding [{path}] failed: {source}")]
    PartialTree {
        path: PersonaVector,
        source: ProviderError,
        /// Every subtree that did complete, siblings renormalized.
        partial: Box<DistributionTree>,
    },
    #[error("every path falls below the pruning threshold")]
    AllPruned,
    #[error("pruning threshold {0} must lie in [0, 1)")]
    InvalidThreshold(f64),
    #[error("unsupported tree format_version {found} (expected {FORMAT_VERSION})")]
    FormatVersionMismatch { found: u32 },
    #[error("tree invariant violated: {0}")]
    InvariantViolation(String),
    #[error("dimension `{0}` is not in the schema")]
    UnknownDimension(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub dimension: String,
    pub label: String,
    /// Conditional probability of this value given the ancestors.
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf(dimension: impl Into<String>, label: impl Into<String>, weight: f64) -> Self {
        Self { dimension: dimension.into(), label: label.into(), weight, children: Vec::new() }
    }

    pub fn value(&self) -> AttributeValue {
        AttributeValue::new(self.dimension.clone(), self.label.clone())
    }

    fn count(&self) -> usize {
        1 + self.children.iter().map(TreeNode::count).sum::<usize>()
    }

    fn expansions(&self) -> usize {
        if self.children.is_empty() {
            0
        } else {
            1 + self.children.iter().map(TreeNode::expansions).sum::<usize>()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeMeta {
    /// Fingerprint of the provider the tree was built with.
    pub provider: String,
    pub params: ProviderParams,
    /// How the tree was produced (`hag`, `hag-flat`, ...).
    #[serde(default)]
    pub builder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_path_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTree {
    pub topic: String,
    pub dim_sequence: Vec<String>,
    /// Children of the virtual root.
    pub children: Vec<TreeNode>,
    pub meta: TreeMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafPersona {
    pub persona: PersonaVector,
    pub path_prob: f64,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    format_version: u32,
    kind: String,
    topic: String,
    dim_sequence: Vec<String>,
    meta: TreeMeta,
    nodes: Vec<TreeNode>,
}

impl DistributionTree {
    pub const KIND: &'static str = "tree";

    pub fn depth(&self) -> usize {
        self.dim_sequence.len()
    }

    pub fn node_count(&self) -> usize {
        self.children.iter().map(TreeNode::count).sum()
    }

    /// Number of expanded nodes, the virtual root included; equals the number
    /// of conditional-distribution requests needed to build the tree.
    pub fn expansion_count(&self) -> usize {
        if self.children.is_empty() {
            0
        } else {
            1 + self.children.iter().map(TreeNode::expansions).sum::<usize>()
        }
    }

    /// Children of the node reached by following `path` from the root.
    pub fn children_at(&self, path: &PersonaVector) -> Option<&[TreeNode]> {
        let mut level = self.children.as_slice();
        for a in path {
            let node = level.iter().find(|n| n.dimension == a.dimension_id && n.label == a.label)?;
            level = node.children.as_slice();
        }
        Some(level)
    }

    /// Structural checks: layer dimensions follow `dim_sequence`, weights lie
    /// in [0, 1], sibling groups are normalized, and every leaf sits at full depth.
    pub fn validate(&self) -> Result<(), TreeError> {
        let mut seen = std::collections::BTreeSet::new();
        if let Some(d) = self.dim_sequence.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(TreeError::InvariantViolation(format!("dimension `{d}` repeats in dim_sequence")));
        }
        if self.dim_sequence.is_empty() {
            return if self.children.is_empty() {
                Ok(())
            } else {
                Err(TreeError::InvariantViolation("nodes present but dim_sequence is empty".into()))
            };
        }
        check_level(&self.children, &self.dim_sequence, 0, &PersonaVector::new())
    }

    /// Root-to-leaf personas with path probabilities, depth-first.
    pub fn enumerate_leaves(&self) -> Vec<LeafPersona> {
        let log_space = self.depth() > LOG_SPACE_DEPTH;
        let mut out = Vec::new();
        collect_leaves(&self.children, &PersonaVector::new(), 0.0, 1.0, log_space, &mut out);
        out
    }

    /// Removes subtrees whose prefix probability is below `min_path_prob` and
    /// renormalizes the surviving siblings.
    pub fn prune(&self, min_path_prob: f64) -> Result<DistributionTree, TreeError> {
        if !(0.0..1.0).contains(&min_path_prob) {
            return Err(TreeError::InvalidThreshold(min_path_prob));
        }
        if min_path_prob == 0.0 {
            return Ok(self.clone());
        }
        let children = prune_level(&self.children, 1.0, min_path_prob);
        if children.is_empty() {
            return Err(TreeError::AllPruned);
        }
        let mut meta = self.meta.clone();
        meta.min_path_prob = Some(min_path_prob);
        Ok(DistributionTree { topic: self.topic.clone(), dim_sequence: self.dim_sequence.clone(), children, meta })
    }

    /// Tree whose joint is the outer product of independent marginals, one
    /// per entry of `dim_sequence`.
    pub fn outer_product(
        topic: impl Into<String>,
        marginals: &[(String, Vec<(String, f64)>)],
        meta: TreeMeta,
    ) -> DistributionTree {
        fn layer(marginals: &[(String, Vec<(String, f64)>)]) -> Vec<TreeNode> {
            let Some(((dim, values), rest)) = marginals.split_first() else {
                return Vec::new();
            };
            let below = layer(rest);
            values
                .iter()
                .map(|(label, w)| TreeNode {
                    dimension: dim.clone(),
                    label: label.clone(),
                    weight: *w,
                    children: below.clone(),
                })
                .collect()
        }
        DistributionTree {
            topic: topic.into(),
            dim_sequence: marginals.iter().map(|(d, _)| d.clone()).collect(),
            children: layer(marginals),
            meta,
        }
    }

    pub fn to_json(&self) -> String {
        let file = TreeFile {
            format_version: FORMAT_VERSION,
            kind: Self::KIND.into(),
            topic: self.topic.clone(),
            dim_sequence: self.dim_sequence.clone(),
            meta: self.meta.clone(),
            nodes: self.children.clone(),
        };
        serde_json::to_string_pretty(&file).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
        if found != FORMAT_VERSION {
            return Err(TreeError::FormatVersionMismatch { found });
        }
        let file: TreeFile = serde_json::from_value(raw)?;
        if file.kind != Self::KIND {
            return Err(TreeError::InvariantViolation(format!("expected kind `tree`, found `{}`", file.kind)));
        }
        let tree =
            DistributionTree { topic: file.topic, dim_sequence: file.dim_sequence, children: file.nodes, meta: file.meta };
        tree.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: &Path) -> Result<(), TreeError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TreeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_level(nodes: &[TreeNode], seq: &[String], depth: usize, path: &PersonaVector) -> Result<(), TreeError> {
    let here = || if path.is_empty() { "root".to_string() } else { path.to_string() };
    if nodes.is_empty() {
        return Err(TreeError::InvariantViolation(format!("node [{}] at depth {depth} has no children", here())));
    }
    let mut labels = std::collections::BTreeSet::new();
    let mut total = 0.0;
    for n in nodes {
        if n.dimension != seq[depth] {
            return Err(TreeError::InvariantViolation(format!(
                "under [{}] expected dimension `{}`, found `{}`",
                here(),
                seq[depth],
                n.dimension
            )));
        }
        if !(0.0..=1.0).contains(&n.weight) {
            return Err(TreeError::InvariantViolation(format!("weight {} of `{}` outside [0, 1]", n.weight, n.label)));
        }
        if !labels.insert(n.label.as_str()) {
            return Err(TreeError::InvariantViolation(format!("label `{}` repeats under [{}]", n.label, here())));
        }
        total += n.weight;
    }
    if (total - 1.0).abs() > SIBLING_TOLERANCE {
        return Err(TreeError::InvariantViolation(format!("children of [{}] sum to {total}", here())));
    }
    if depth + 1 == seq.len() {
        if let Some(n) = nodes.iter().find(|n| !n.children.is_empty()) {
            return Err(TreeError::InvariantViolation(format!("leaf `{}` has children beyond the last layer", n.label)));
        }
        return Ok(());
    }
    for n in nodes {
        check_level(&n.children, seq, depth + 1, &path.with(n.value()))?;
    }
    Ok(())
}

fn collect_leaves(
    nodes: &[TreeNode],
    path: &PersonaVector,
    log_acc: f64,
    acc: f64,
    log_space: bool,
    out: &mut Vec<LeafPersona>,
) {
    for n in nodes {
        let (log_p, p) = if log_space { (log_acc + n.weight.ln(), 0.0) } else { (0.0, acc * n.weight) };
        let child_path = path.with(n.value());
        if n.children.is_empty() {
            let path_prob = if log_space { log_p.exp() } else { p };
            out.push(LeafPersona { persona: child_path, path_prob });
        } else {
            collect_leaves(&n.children, &child_path, log_p, p, log_space, out);
        }
    }
}

fn prune_level(nodes: &[TreeNode], prefix: f64, threshold: f64) -> Vec<TreeNode> {
    let mut kept: Vec<TreeNode> = Vec::new();
    for n in nodes {
        let p = prefix * n.weight;
        if p < threshold {
            continue;
        }
        if n.children.is_empty() {
            kept.push(n.clone());
            continue;
        }
        let children = prune_level(&n.children, p, threshold);
        if !children.is_empty() {
            kept.push(TreeNode { children, ..n.clone() });
        }
    }
    renormalize(&mut kept);
    kept
}

fn renormalize(nodes: &mut [TreeNode]) {
    let total: f64 = nodes.iter().map(|n| n.weight).sum();
    if total > 0.0 {
        for n in nodes.iter_mut() {
            n.weight /= total;
        }
    }
}

/// Outcome of expanding one node: the surviving children plus any failures
/// beneath it, in depth-first order.
struct Expansion {
    children: Vec<TreeNode>,
    failures: Vec<(PersonaVector, ProviderError)>,
}

fn expand(
    provider: &dyn KnowledgeProvider,
    topic: &str,
    schema: &DimensionSchema,
    seq: &[String],
    params: &ProviderParams,
    path: &PersonaVector,
) -> Expansion {
    let depth = path.len();
    let dim = schema.get(&seq[depth]).expect("dim_sequence checked against schema");
    let values = match provider.infer_conditional(topic, dim, path, params, dim.vocabulary.as_deref()) {
        Ok(v) => v,
        Err(e) => return Expansion { children: Vec::new(), failures: vec![(path.clone(), e)] },
    };
    let last = depth + 1 == seq.len();
    let subtrees: Vec<Expansion> = if last {
        Vec::new()
    } else {
        values
            .par_iter()
            .map(|v| expand(provider, topic, schema, seq, params, &path.with(AttributeValue::new(&dim.id, &v.label))))
            .collect()
    };
    let mut children = Vec::with_capacity(values.len());
    let mut failures = Vec::new();
    for (i, v) in values.iter().enumerate() {
        let mut node = TreeNode::leaf(&dim.id, &v.label, v.weight);
        if !last {
            let sub = &subtrees[i];
            failures.extend(sub.failures.iter().cloned());
            if sub.children.is_empty() {
                continue;
            }
            node.children = sub.children.clone();
        }
        children.push(node);
    }
    if !failures.is_empty() {
        renormalize(&mut children);
    }
    Expansion { children, failures }
}

/// Builds the tree for `topic`: one prioritization call, then one
/// conditional-distribution call per internal node, each conditioned on the
/// full ancestor path. Sibling subtrees expand concurrently.
pub fn build_tree(
    topic: &str,
    schema: &DimensionSchema,
    provider: &dyn KnowledgeProvider,
    params: &ProviderParams,
) -> Result<DistributionTree, TreeError> {
    if topic.trim().is_empty() {
        return Err(TreeError::EmptyTopic);
    }
    let mut seq = provider.prioritize_dims(topic, schema, params)?;
    seq.truncate(params.max_depth);
    if let Some(d) = seq.iter().find(|d| schema.get(d).is_none()) {
        return Err(TreeError::UnknownDimension(d.clone()));
    }
    let meta = TreeMeta {
        provider: provider.fingerprint(),
        params: params.clone(),
        builder: "hag".into(),
        ..Default::default()
    };
    let root = expand(provider, topic, schema, &seq, params, &PersonaVector::new());
    let tree = DistributionTree { topic: topic.to_string(), dim_sequence: seq, children: root.children, meta };
    if let Some((path, source)) = root.failures.into_iter().next() {
        return Err(TreeError::PartialTree { path, source, partial: Box::new(tree) });
    }
    Ok(tree)
}

/// Leaf probabilities keyed by the joined leaf labels.
pub fn leaf_table(leaves: &[LeafPersona]) -> BTreeMap<String, f64> {
    leaves.iter().map(|l| (l.persona.labels().join(" | "), l.path_prob)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::dims;
    use crate::provider::{MockBackend, MockTable, WorldModel};
    use std::sync::Arc;

    fn node(dim: &str, label: &str, w: f64, children: Vec<TreeNode>) -> TreeNode {
        TreeNode { dimension: dim.into(), label: label.into(), weight: w, children }
    }

    fn two_level(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> DistributionTree {
        DistributionTree {
            topic: "t".into(),
            dim_sequence: vec!["x".into(), "y".into()],
            children: vec![
                node("x", "x1", a.0, vec![node("y", "y1", b.0, vec![]), node("y", "y2", b.1, vec![])]),
                node("x", "x2", a.1, vec![node("y", "y1", c.0, vec![]), node("y", "y2", c.1, vec![])]),
            ],
            meta: TreeMeta::default(),
        }
    }

    #[test]
    fn uniform_binary_leaves() {
        let tree = two_level((0.5, 0.5), (0.5, 0.5), (0.5, 0.5));
        tree.validate().unwrap();
        let leaves = tree.enumerate_leaves();
        assert_eq!(leaves.len(), 4);
        assert!(leaves.iter().all(|l| l.path_prob == 0.25));
    }

    #[test]
    fn path_products() {
        let tree = two_level((0.6, 0.4), (0.5, 0.5), (0.5, 0.5));
        let probs: Vec<f64> = tree.enumerate_leaves().iter().map(|l| l.path_prob).collect();
        // oracle: exhaustive path products
        let expect = [0.6 * 0.5, 0.6 * 0.5, 0.4 * 0.5, 0.4 * 0.5];
        for (p, e) in probs.iter().zip(expect) {
            assert!((p - e).abs() < 1e-15);
        }
        assert!((probs[0] - 0.30).abs() < 1e-12 && (probs[3] - 0.20).abs() < 1e-12);
    }

    #[test]
    fn single_chain_and_empty_tree() {
        let chain = DistributionTree {
            topic: "t".into(),
            dim_sequence: vec!["a".into(), "b".into()],
            children: vec![node("a", "a", 1.0, vec![node("b", "b", 1.0, vec![])])],
            meta: TreeMeta::default(),
        };
        let leaves = chain.enumerate_leaves();
        assert_eq!(leaves.len(), 1);
        assert_eq!(leaves[0].path_prob, 1.0);
        let empty = DistributionTree {
            topic: "t".into(),
            dim_sequence: vec![],
            children: vec![],
            meta: TreeMeta::default(),
        };
        empty.validate().unwrap();
        assert!(empty.enumerate_leaves().is_empty());
    }

    #[test]
    fn prune_examples() {
        let flat = DistributionTree {
            topic: "t".into(),
            dim_sequence: vec!["a".into()],
            children: vec![node("a", "p", 0.9, vec![]), node("a", "q", 0.06, vec![]), node("a", "r", 0.04, vec![])],
            meta: TreeMeta::default(),
        };
        assert_eq!(flat.prune(0.0).unwrap(), flat);
        let pruned = flat.prune(0.05).unwrap();
        let probs: Vec<f64> = pruned.enumerate_leaves().iter().map(|l| l.path_prob).collect();
        // oracle: drop 0.04, divide by 0.96
        assert!((probs[0] - 0.9 / 0.96).abs() < 1e-12);
        assert!((probs[1] - 0.06 / 0.96).abs() < 1e-12);
        assert!((probs[0] - 0.9375).abs() < 1e-12 && (probs[1] - 0.0625).abs() < 1e-12);
        pruned.validate().unwrap();

        let uniform = two_level((0.5, 0.5), (0.5, 0.5), (0.5, 0.5));
        assert!(matches!(uniform.prune(0.95), Err(TreeError::AllPruned)));
        assert!(matches!(uniform.prune(1.0), Err(TreeError::InvalidThreshold(_))));
    }

    #[test]
    fn prune_conserves_mass_in_deep_trees() {
        let tree = two_level((0.9, 0.1), (0.97, 0.03), (0.5, 0.5));
        let pruned = tree.prune(0.04).unwrap();
        pruned.validate().unwrap();
        let total: f64 = pruned.enumerate_leaves().iter().map(|l| l.path_prob).sum();
        assert!((total - 1.0).abs() < MASS_TOLERANCE);
        assert_eq!(pruned.enumerate_leaves().len(), 3);
    }

    #[test]
    fn serialization_round_trip_and_rejections() {
        let tree = two_level((0.6, 0.4), (0.1, 0.9), (1.0 / 3.0, 2.0 / 3.0));
        let text = tree.to_json();
        assert_eq!(DistributionTree::from_json(&text).unwrap(), tree);

        let bad = two_level((0.5, 0.5), (0.4, 0.4), (0.5, 0.5)).to_json();
        assert!(matches!(DistributionTree::from_json(&bad), Err(TreeError::InvariantViolation(_))));

        let future = text.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
        assert!(matches!(DistributionTree::from_json(&future), Err(TreeError::FormatVersionMismatch { found: 99 })));
    }

    #[test]
    fn deep_products_use_log_space() {
        let seq: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let mut level = vec![];
        for d in seq.iter().rev() {
            level = vec![node(d, "a", 0.5, level.clone()), node(d, "b", 0.5, level)];
        }
        let tree = DistributionTree { topic: "t".into(), dim_sequence: seq, children: level, meta: TreeMeta::default() };
        tree.validate().unwrap();
        let leaves = tree.enumerate_leaves();
        assert_eq!(leaves.len(), 1024);
        for l in &leaves {
            assert!((l.path_prob - 1.0 / 1024.0).abs() < 1e-15);
        }
    }

    fn oracle_provider() -> WorldModel {
        let table = MockTable::default()
            .with_priorities("T", &["Education", "Income Level"])
            .with_rule("T", dims::EDUCATION, &[], &[("University", 0.5), ("Primary", 0.5)])
            .with_rule("T", dims::INCOME_LEVEL, &[(dims::EDUCATION, "University")], &[("High", 0.7), ("Low", 0.3)])
            .with_rule("T", dims::INCOME_LEVEL, &[(dims::EDUCATION, "Primary")], &[("High", 0.1), ("Low", 0.9)]);
        WorldModel::new(Arc::new(MockBackend::new(table, 0)))
    }

    #[test]
    fn subtrees_follow_their_ancestors() {
        let wm = oracle_provider();
        let tree = build_tree("T", &DimensionSchema::default(), &wm, &ProviderParams::default()).unwrap();
        assert_eq!(tree.dim_sequence, vec![dims::EDUCATION, dims::INCOME_LEVEL]);
        let high = |edu: &str| {
            let path = PersonaVector::from_pairs([(dims::EDUCATION, edu)]);
            tree.children_at(&path).unwrap().iter().find(|n| n.label == "High").unwrap().weight
        };
        assert_eq!(high("University"), 0.7);
        assert_eq!(high("Primary"), 0.1);
        assert_eq!(tree.expansion_count(), 3);
    }

    #[test]
    fn call_count_matches_expansions() {
        let mock = Arc::new(MockBackend::new(MockTable::default(), 11));
        let wm = WorldModel::new(mock.clone());
        let tree = build_tree("Cats", &DimensionSchema::default(), &wm, &ProviderParams::default()).unwrap();
        tree.validate().unwrap();
        assert!(tree.depth() <= 5);
        assert_eq!(mock.calls_of("prioritize_dims"), 1);
        assert_eq!(mock.calls_of("infer_conditional"), tree.expansion_count());
    }

    #[test]
    fn failing_subtree_yields_partial_tree() {
        use crate::provider::chat::{FnBackend, Task};
        let backend = FnBackend::new("flaky", |req| match &req.task {
            Task::PrioritizeDims { .. } => Ok(r#"{"dimensions":["Gender","Age"]}"#.into()),
            Task::InferConditional { context, .. } if context.is_empty() => {
                Ok(r#"{"distribution":[{"value":"Male","probability":0.5},{"value":"Female","probability":0.5}]}"#.into())
            }
            Task::InferConditional { context, .. } if context.get(dims::GENDER) == Some("Male") => {
                Ok(r#"{"distribution":[{"value":"18-24","probability":1.0}]}"#.into())
            }
            _ => Ok("garbage".into()),
        });
        let wm = WorldModel::new(Arc::new(backend));
        let err = build_tree("t", &DimensionSchema::default(), &wm, &ProviderParams::default()).unwrap_err();
        let TreeError::PartialTree { path, partial, .. } = err else { panic!("expected partial tree") };
        assert_eq!(path.get(dims::GENDER), Some("Female"));
        partial.validate().unwrap();
        assert_eq!(partial.enumerate_leaves().len(), 1);
    }
}
