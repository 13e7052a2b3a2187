//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

pub const DEFAULT_RESTARTS: usize = 20;
const MAX_LLOYD_ITER: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Set when fewer than the requested number of distinct points exist;
    /// `k` is then lowered to the number of distinct points.
    pub degenerate: bool,
}

impl KMeans {
    /// Index of the nearest centroid and the Euclidean distance to it.
    pub fn assign(&self, x: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, x)
    }
}

/// Best-of-`restarts` k-means. Labels are renumbered in order of first
/// appearance, so equal partitions always produce equal label sequences.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if points.is_empty() {
        return Err(config("k-means needs at least one point"));
    }
    if k == 0 || restarts == 0 {
        return Err(config("k and restarts must be positive"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(config("k-means points must share a dimension"));
    }
    let distinct = count_distinct(points, k);
    let degenerate = distinct < k;
    let k = k.min(distinct);

    let mut best: Option<(Vec<Vec<f64>>, Vec<usize>, f64)> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let (c, l, inertia) = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| inertia < b.2) {
            best = Some((c, l, inertia));
        }
    }
    let (centroids, labels, inertia) = best.expect("at least one restart");
    let (centroids, labels) = canonicalize(centroids, labels);
    Ok(KMeans {
        k,
        centroids,
        labels,
        inertia,
        degenerate,
    })
}

fn count_distinct(points: &[Vec<f64>], cap: usize) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !seen.contains(&p) {
            seen.push(p);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, best.1.sqrt())
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            0
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>, f64) {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_LLOYD_ITER {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let (c, _) = nearest(&centroids, p);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[labels[a]])
                            .total_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                    })
                    .unwrap_or(0);
                centroids[c] = points[far].clone();
            } else {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = labels
        .iter()
        .zip(points)
        .map(|(&l, p)| sq_dist(p, &centroids[l]))
        .sum();
    (centroids, labels, inertia)
}

fn canonicalize(centroids: Vec<Vec<f64>>, labels: Vec<usize>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let k = centroids.len();
    let mut order = Vec::with_capacity(k);
    for &l in &labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    for c in 0..k {
        if !order.contains(&c) {
            order.push(c);
        }
    }
    let mut rename = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rename[old] = new;
    }
    let centroids = order.iter().map(|&old| centroids[old].clone()).collect();
    (centroids, labels.into_iter().map(|l| rename[l]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_separated_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            pts.push(vec![e, -e]);
            pts.push(vec![100.0 + e, 50.0 - e]);
        }
        let km = kmeans(&pts, 2, DEFAULT_RESTARTS, 1).unwrap();
        assert!(!km.degenerate);
        for (i, &l) in km.labels.iter().enumerate() {
            assert_eq!(l, i % 2);
        }
    }

    #[test]
    fn fewer_distinct_points_than_k() {
        let pts = vec![vec![1.0, 1.0]; 6];
        let km = kmeans(&pts, 4, 3, 0).unwrap();
        assert!(km.degenerate);
        assert_eq!(km.k, 1);
        assert_eq!(km.labels, vec![0; 6]);
        assert_eq!(km.inertia, 0.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        let a = kmeans(&pts, 4, 5, 9).unwrap();
        let b = kmeans(&pts, 4, 5, 9).unwrap();
        assert_eq!(a, b);
    }
}
