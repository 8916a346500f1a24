//! Lloyd's k-means with k-means++ seeding over dense `f64` points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Squared distance of each point to its assigned centroid.
    pub distances: Vec<f64>,
    /// Inertia after the seeding assignment and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansOutcome {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("history starts with the seeding inertia")
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = closest.iter().rposition(|&d| d > 0.0).expect("total > 0");
            for (i, &d) in closest.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // Every point coincides with a chosen center; fall back to uniform
            // choice among the rest.
            let rest: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
            rest[rng.random_range(0..rest.len())]
        };
        chosen.push(next);
        for (c, p) in closest.iter_mut().zip(points) {
            *c = c.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Clusters `points` into `k` groups. Requires `1 <= k <= points.len()` and
/// points of equal dimensionality.
///
/// Iterates until the assignment is a fixpoint or `max_iterations` is
/// reached. A point only moves to a strictly closer centroid and an emptied
/// cluster keeps its previous centroid, so inertia never increases.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> KMeansOutcome {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=points");
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);

    let mut assignments = Vec::with_capacity(points.len());
    let mut distances = Vec::with_capacity(points.len());
    for p in points {
        let (c, d) = nearest(p, &centroids);
        assignments.push(c);
        distances.push(d);
    }
    let mut inertia_history = vec![distances.iter().sum()];
    let mut iterations = 0;

    while iterations < max_iterations {
        iterations += 1;
        let mut sums = vec![vec![0f64; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            sizes[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (c, (sum, size)) in sums.into_iter().zip(&sizes).enumerate() {
            if *size > 0 {
                centroids[c] = sum.into_iter().map(|s| s / *size as f64).collect();
            }
        }

        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let current = sq_dist(p, &centroids[assignments[i]]);
            let (best, best_d) = nearest(p, &centroids);
            if best != assignments[i] && best_d < current {
                assignments[i] = best;
                distances[i] = best_d;
                changed = true;
            } else {
                distances[i] = current;
            }
        }
        inertia_history.push(distances.iter().sum());
        if !changed {
            break;
        }
    }

    KMeansOutcome { assignments, centroids, distances, inertia_history, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr_free_normal as normal;

    /// Box-Muller, so the tests need no extra distribution crate.
    mod rand_distr_free_normal {
        use rand::Rng;
        pub fn sample(rng: &mut impl Rng) -> f64 {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let out = kmeans(&pts, 1, 42, MAX_ITERATIONS);
        assert_eq!(out.assignments, [0, 0, 0]);
        assert!((out.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((out.centroids[0][1] - 1.0).abs() < 1e-12);
        let expected: f64 = pts.iter().map(|p| sq_dist(p, &[1.0, 1.0])).sum();
        assert!((out.inertia() - expected).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let mut pts = Vec::new();
            let mut truth = Vec::new();
            for blob in 0..2 {
                let center = if blob == 0 { -10.0 } else { 10.0 };
                for _ in 0..15 {
                    pts.push(vec![center + normal::sample(&mut rng), normal::sample(&mut rng)]);
                    truth.push(blob);
                }
            }
            let out = kmeans(&pts, 2, trial, MAX_ITERATIONS);
            let flip = out.assignments[0] != truth[0];
            for (a, t) in out.assignments.iter().zip(&truth) {
                assert_eq!(*a == 1, (*t == 1) != flip);
            }
        }
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = rng.random_range(5..80);
            let dim = rng.random_range(1..6);
            let pts: Vec<Vec<f64>> =
                (0..n).map(|_| (0..dim).map(|_| normal::sample(&mut rng) * 3.0).collect()).collect();
            let k = rng.random_range(1..=n.min(8));
            let out = kmeans(&pts, k, seed, MAX_ITERATIONS);
            for w in out.inertia_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "seed {seed}: {:?}", out.inertia_history);
            }
            assert!(out.iterations <= MAX_ITERATIONS);
        }
    }

    #[test]
    fn same_seed_same_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..60).map(|_| vec![normal::sample(&mut rng), normal::sample(&mut rng)]).collect();
        assert_eq!(kmeans(&pts, 4, 42, MAX_ITERATIONS), kmeans(&pts, 4, 42, MAX_ITERATIONS));
    }

    #[test]
    fn coincident_points_still_seed() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let out = kmeans(&pts, 3, 0, MAX_ITERATIONS);
        assert_eq!(out.centroids.len(), 3);
        assert_eq!(out.inertia(), 0.0);
    }
}
