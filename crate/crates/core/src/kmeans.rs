//! k-means with k-means++ seeding and Lloyd refinement over flat row-major points.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub dim: usize,
    /// `k * dim` centroid coordinates.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after seeding and after every Lloyd step.
    pub inertia_trace: Vec<f64>,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, then proportional to squared distance.
pub fn kmeans_plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centroids[start..start + dim]));
        }
    }
    centroids
}

/// Clusters `points` (`n * dim` values) into `min(k, n)` groups.
///
/// Lloyd iterations stop at an assignment fixpoint or after `max_iter` steps.
/// Empty clusters keep their previous centroid.
pub fn kmeans(points: &[f64], dim: usize, k: usize, max_iter: usize, seed: u64) -> KMeans {
    let n = points.len() / dim;
    assert!(n > 0 && k > 0, "k-means needs at least one point and one cluster");
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, dim, k, &mut rng);
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut assignments = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();
    let mut inertia = 0.0;
    for (i, a) in assignments.iter_mut().enumerate() {
        let (c, d) = nearest(point(i), &centroids, dim);
        *a = c;
        inertia += d;
    }
    inertia_trace.push(inertia);

    for _ in 0..max_iter {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, a) in assignments.iter_mut().enumerate() {
            let (c, d) = nearest(point(i), &centroids, dim);
            // keep the current cluster on ties so the fixpoint test is stable
            let current = sq_dist(point(i), &centroids[*a * dim..(*a + 1) * dim]);
            if c != *a && d < current {
                *a = c;
                changed = true;
                inertia += d;
            } else {
                inertia += current;
            }
        }
        inertia_trace.push(inertia);
        if !changed {
            break;
        }
    }
    KMeans {
        dim,
        centroids,
        assignments,
        inertia_trace,
    }
}
