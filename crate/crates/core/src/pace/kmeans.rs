//! Seeded k-means and the archetype summary built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PaceError;
use crate::embed::Embedder;
use crate::persona::{PersonaRecord, Population};

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Farthest-point seeding: a seeded random first center, then repeatedly the
/// point farthest from every chosen center (lowest index on ties).
fn seed_centers(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let (far, _) = min_d
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, d)| if *d > best.1 { (i, *d) } else { best });
        let c = points[far].clone();
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd iterations from farthest-point seeds. Empty clusters keep their
/// previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Clustering {
    assert!(k >= 1 && k <= points.len(), "k must lie in 1..=points");
    let dim = points[0].len();
    let mut centroids = seed_centers(points, k, seed);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Clustering { assignments, centroids }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    /// Member closest to the cluster centroid.
    pub representative: PersonaRecord,
    pub member_index: usize,
    pub size: usize,
    pub share: f64,
}

/// Clusters rendered-persona embeddings into `k` groups and returns one
/// representative member per non-empty cluster, largest share first.
pub fn archetype_centroids(
    pop: &Population,
    embedder: &dyn Embedder,
    k: usize,
    seed: u64,
) -> Result<Vec<Archetype>, PaceError> {
    if k == 0 || pop.size() < k {
        return Err(PaceError::PopulationTooSmall { size: pop.size(), k });
    }
    let texts: Vec<String> = pop.members.iter().map(PersonaRecord::render_text).collect();
    let vectors = embedder.embed_documents(&texts)?;
    let points: Vec<Vec<f64>> = vectors.iter().map(|v| v.iter().map(|x| *x as f64).collect()).collect();
    Ok(summarize(pop, &points, &kmeans(&points, k, seed, MAX_ITERATIONS)))
}

pub(crate) fn summarize(pop: &Population, points: &[Vec<f64>], clustering: &Clustering) -> Vec<Archetype> {
    let n = points.len() as f64;
    let mut out = Vec::new();
    for (c, centroid) in clustering.centroids.iter().enumerate() {
        let members: Vec<usize> = (0..points.len()).filter(|&i| clustering.assignments[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let rep = *members
            .iter()
            .min_by(|&&a, &&b| dist2(&points[a], centroid).total_cmp(&dist2(&points[b], centroid)).then(a.cmp(&b)))
            .expect("non-empty");
        out.push(Archetype {
            representative: pop.members[rep].clone(),
            member_index: rep,
            size: members.len(),
            share: members.len() as f64 / n,
        });
    }
    out.sort_by(|a, b| b.size.cmp(&a.size).then(a.member_index.cmp(&b.member_index)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let dim = members[0].len();
            let mean: Vec<f64> =
                (0..dim).map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64).collect();
            total += members.iter().map(|p| dist2(p, &mean)).sum::<f64>();
        }
        total
    }

    #[test]
    fn two_blobs_match_brute_force_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut points = Vec::new();
        for i in 0..16 {
            let (cx, cy) = if i % 2 == 0 { (0.0, 0.0) } else { (10.0, 10.0) };
            points.push(vec![cx + rng.random_range(-1.0..1.0), cy + rng.random_range(-1.0..1.0)]);
        }
        // oracle: exhaustive search over all 2-partitions
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1..(1u32 << points.len()) - 1 {
            let labels: Vec<usize> = (0..points.len()).map(|i| ((mask >> i) & 1) as usize).collect();
            let s = sse(&points, &labels, 2);
            if s < best.0 {
                best = (s, mask);
            }
        }
        let got = kmeans(&points, 2, 42, MAX_ITERATIONS);
        assert!((sse(&points, &got.assignments, 2) - best.0).abs() < 1e-9);
        for i in 0..points.len() {
            assert_eq!(got.assignments[i] == got.assignments[0], i % 2 == 0);
        }
    }

    #[test]
    fn k_equal_to_n_separates_every_point() {
        let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let got = kmeans(&points, 6, 1, MAX_ITERATIONS);
        let mut seen = got.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let points = vec![vec![0.0], vec![1.0], vec![5.0]];
        let got = kmeans(&points, 1, 9, MAX_ITERATIONS);
        assert!((got.centroids[0][0] - 2.0).abs() < 1e-12);
    }
}
