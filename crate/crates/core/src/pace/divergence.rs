//! Distribution divergences and diversity indices. Logarithms are base 2.

use std::collections::{BTreeMap, BTreeSet};

use super::PaceError;
use crate::persona::{label_counts, Distribution, DimensionSchema, Population, UNKNOWN};

/// Smoothing mass added to every category of the reference distribution.
pub const DEFAULT_EPSILON: f64 = 1e-6;

fn check_same(p: &Distribution, q: &Distribution) -> Result<(), PaceError> {
    if p.dimension_id != q.dimension_id {
        return Err(PaceError::DimensionMismatch(p.dimension_id.clone(), q.dimension_id.clone()));
    }
    Ok(())
}

fn support<'a>(p: &'a Distribution, q: &'a Distribution) -> BTreeSet<&'a str> {
    p.entries.keys().chain(q.entries.keys()).map(String::as_str).collect()
}

fn xlog(x: f64, m: f64) -> f64 {
    if x > 0.0 {
        x * (x / m).log2()
    } else {
        0.0
    }
}

/// Jensen-Shannon divergence over the union of both supports.
pub fn jsd(p: &Distribution, q: &Distribution) -> Result<f64, PaceError> {
    check_same(p, q)?;
    let mut total = 0.0;
    for label in support(p, q) {
        let (a, b) = (p.prob(label), q.prob(label));
        let m = (a + b) / 2.0;
        // the per-label term is symmetric in (a, b), so the sum is too
        total += 0.5 * (xlog(a, m) + xlog(b, m));
    }
    Ok(total.clamp(0.0, 1.0))
}

/// KL(P ‖ Q) with Q smoothed: add `epsilon` to every category of the union
/// support, then renormalize.
pub fn kl(p: &Distribution, q: &Distribution, epsilon: f64) -> Result<f64, PaceError> {
    check_same(p, q)?;
    let labels = support(p, q);
    let norm = 1.0 + epsilon * labels.len() as f64;
    let total: f64 = labels.iter().map(|l| xlog(p.prob(l), (q.prob(l) + epsilon) / norm)).sum();
    Ok(total.max(0.0))
}

pub fn gini_simpson(p: &Distribution) -> f64 {
    1.0 - p.entries.values().map(|x| x * x).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Jsd,
    Kl,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DimensionScores {
    pub per_dimension: BTreeMap<String, f64>,
    pub mean: f64,
    /// Dimensions left out because one side holds only `Unknown`.
    pub excluded: Vec<String>,
}

/// Known-value marginal, or `None` when every member is `Unknown` there.
fn known_marginal(pop: &Population, dim: &str) -> Option<Distribution> {
    Distribution::from_counts(dim, &label_counts(pop, dim)).ok()
}

fn per_dimension(
    gen: &Population,
    gt: &Population,
    schema: &DimensionSchema,
    score: impl Fn(&Distribution, &Distribution) -> Result<f64, PaceError>,
) -> Result<DimensionScores, PaceError> {
    if gen.is_empty() || gt.is_empty() {
        return Err(PaceError::EmptyPopulation);
    }
    let mut per_dimension = BTreeMap::new();
    let mut excluded = Vec::new();
    for dim in schema.ids() {
        match (known_marginal(gen, dim), known_marginal(gt, dim)) {
            (Some(g), Some(t)) => {
                per_dimension.insert(dim.to_string(), score(&g, &t)?);
            }
            _ => excluded.push(dim.to_string()),
        }
    }
    if per_dimension.is_empty() {
        return Err(PaceError::NoEvaluableDimensions);
    }
    let mean = per_dimension.values().sum::<f64>() / per_dimension.len() as f64;
    Ok(DimensionScores { per_dimension, mean, excluded })
}

/// Mean per-dimension divergence of the generated marginals from the
/// reference marginals.
pub fn dist_fidelity(
    gen: &Population,
    gt: &Population,
    schema: &DimensionSchema,
    metric: Metric,
    epsilon: f64,
) -> Result<DimensionScores, PaceError> {
    per_dimension(gen, gt, schema, |g, t| match metric {
        Metric::Jsd => jsd(g, t),
        Metric::Kl => kl(g, t, epsilon),
    })
}

/// Mean absolute gap between generated and reference Gini-Simpson indices.
pub fn diversity_error(gen: &Population, gt: &Population, schema: &DimensionSchema) -> Result<DimensionScores, PaceError> {
    per_dimension(gen, gt, schema, |g, t| Ok((gini_simpson(g) - gini_simpson(t)).abs()))
}

/// Empirical joint distribution over `dims`; members with `Unknown` in any of
/// them are skipped. Labels are joined with `" | "`.
pub fn joint_distribution(pop: &Population, dims: &[String]) -> Result<Distribution, PaceError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for m in &pop.members {
        let labels: Option<Vec<&str>> = dims.iter().map(|d| m.get(d).filter(|l| *l != UNKNOWN)).collect();
        if let Some(labels) = labels {
            *counts.entry(labels.join(" | ")).or_insert(0) += 1;
        }
    }
    Distribution::from_counts(dims.join("+"), &counts).map_err(|_| PaceError::NoEvaluableDimensions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::test_support::population_with;
    use crate::persona::dims;

    fn dist(pairs: &[(&str, f64)]) -> Distribution {
        Distribution::new("x", pairs.iter().map(|(l, p)| (l.to_string(), *p)).collect()).unwrap()
    }

    #[test]
    fn jsd_examples() {
        let p = dist(&[("a", 0.5), ("b", 0.5)]);
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert_eq!(jsd(&dist(&[("a", 1.0)]), &dist(&[("b", 1.0)])).unwrap(), 1.0);
        // oracle: 0.5*KL(P||M) + 0.5*KL(Q||M), M = (0.75, 0.25)
        let q = dist(&[("a", 1.0), ("b", 0.0)]);
        let m = [0.75, 0.25];
        let oracle = 0.5 * (0.5 * (0.5f64 / m[0]).log2() + 0.5 * (0.5f64 / m[1]).log2()) + 0.5 * (1.0f64 / m[0]).log2();
        let got = jsd(&p, &q).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.3113).abs() < 1e-4);
        assert_eq!(jsd(&p, &q).unwrap(), jsd(&q, &p).unwrap());
    }

    #[test]
    fn kl_examples() {
        let p = dist(&[("a", 0.3), ("b", 0.7)]);
        assert!(kl(&p, &p, DEFAULT_EPSILON).unwrap().abs() < 1e-12);
        assert!(kl(&p, &p, 0.0).unwrap().abs() < 1e-12);
        let one = dist(&[("a", 1.0)]);
        let half = dist(&[("a", 0.5), ("b", 0.5)]);
        assert!((kl(&one, &half, DEFAULT_EPSILON).unwrap() - 1.0).abs() < 1e-5);
        let k1 = kl(&half, &one, 1e-6).unwrap();
        let k2 = kl(&half, &one, 1e-3).unwrap();
        assert!(k1.is_finite() && k2 < k1);
        let other = Distribution::new("y", half.entries.clone()).unwrap();
        assert!(matches!(kl(&half, &other, 1e-6), Err(PaceError::DimensionMismatch(..))));
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_simpson(&dist(&[("a", 1.0)])), 0.0);
        assert_eq!(gini_simpson(&dist(&[("a", 0.25), ("b", 0.25), ("c", 0.25), ("d", 0.25)])), 0.75);
        assert!((gini_simpson(&dist(&[("a", 0.7), ("b", 0.3)])) - (1.0 - 0.49 - 0.09)).abs() < 1e-12);
    }

    #[test]
    fn fidelity_identity_and_exclusions() {
        let schema = DimensionSchema::default();
        let pop = population_with(&schema, dims::GENDER, &["Male", "Female", "Male"]);
        let s = dist_fidelity(&pop, &pop, &schema, Metric::Jsd, DEFAULT_EPSILON).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.per_dimension.len(), 12);

        let unknown = population_with(&schema, dims::RELIGION, &["Unknown", "Unknown"]);
        let s = dist_fidelity(&pop, &unknown, &schema, Metric::Jsd, DEFAULT_EPSILON).unwrap();
        assert_eq!(s.excluded, vec![dims::RELIGION.to_string()]);
        // oracle: gender differs (JSD of {M 2/3, F 1/3} vs {first label}), every other dim agrees
        let g = dist(&[("Female", 1.0 / 3.0), ("Male", 2.0 / 3.0)]);
        let t = dist(&[("Male", 1.0)]);
        let expect = jsd(&g, &t).unwrap() / 11.0;
        assert!((s.mean - expect).abs() < 1e-12);
    }

    #[test]
    fn diversity_error_example() {
        let schema = DimensionSchema::default();
        let degenerate = population_with(&schema, dims::AGE, &["18-24"; 4]);
        let uniform = population_with(&schema, dims::AGE, &["18-24", "25-34", "35-44", "45-54"]);
        let d = diversity_error(&degenerate, &uniform, &schema).unwrap();
        assert!((d.per_dimension[dims::AGE] - 0.75).abs() < 1e-12);
        assert!((d.mean - 0.75 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn joint_skips_unknown() {
        let schema = DimensionSchema::default();
        let pop = population_with(&schema, dims::GENDER, &["Male", "Female", "Unknown", "Male"]);
        let j = joint_distribution(&pop, &[dims::GENDER.into(), dims::AGE.into()]).unwrap();
        assert!((j.prob("Male | 18-24") - 2.0 / 3.0).abs() < 1e-12);
    }
}
