use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    /// k×D row-major.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut chosen = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(row(i), row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on an already-covered point
            if d2[pick] == 0.0 {
                pick = d2.iter().position(|&w| w > 0.0).expect("total > 0");
            }
            pick
        } else {
            // every point coincides with a seed: take the first unused index
            (0..m).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), row(next)));
        }
    }
    chosen.iter().flat_map(|&i| row(i).to_vec()).collect()
}

fn lloyd(data: &[f64], dim: usize, mut centroids: Vec<f64>) -> KMeans {
    let m = data.len() / dim;
    let k = centroids.len() / dim;
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut inertia = 0.0;
        let next: Vec<usize> = data
            .chunks_exact(dim)
            .map(|x| {
                let (c, d) = nearest(x, &centroids, dim);
                inertia += d;
                c
            })
            .collect();
        history.push(inertia);
        if next == assignment {
            break;
        }
        assignment = next;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &c) in data.chunks_exact(dim).zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            // an empty cluster keeps its previous centroid
            if counts[c] > 0 {
                for t in 0..dim {
                    centroids[c * dim + t] = sums[c * dim + t] / counts[c] as f64;
                }
            }
        }
    }
    if assignment.len() != m {
        assignment = data.chunks_exact(dim).map(|x| nearest(x, &centroids, dim).0).collect();
    }
    let inertia = *history.last().expect("at least one iteration");
    KMeans {
        assignment,
        centroids,
        inertia,
        history,
    }
}

/// k-means++ seeding and Lloyd iterations, best of `n_init` restarts by
/// inertia (earliest restart on ties). `data` is M×`dim` row-major.
pub fn kmeans(data: &[f64], dim: usize, k: usize, seed: u64, n_init: usize) -> Result<KMeans> {
    if dim == 0 || data.is_empty() || data.len() % dim != 0 {
        return Err(Error::invalid("k-means input", format!("{} values do not form rows of {dim}", data.len())));
    }
    let m = data.len() / dim;
    if k < 1 || k > m {
        return Err(Error::invalid("k", format!("need 1 <= k <= {m}, got {k}")));
    }
    if n_init == 0 {
        return Err(Error::invalid("n_init", "must be >= 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..n_init {
        let seeds = plus_plus_seeds(data, dim, k, &mut rng);
        let run = lloyd(data, dim, seeds);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

#[cfg(test)]
mod tests {
    use rand_distr::StandardNormal;

    use super::*;

    fn random_points(m: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn k_equals_m_gives_zero_inertia() {
        let data = random_points(7, 3, 1);
        let r = kmeans(&data, 3, 7, 0, 3).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut seen = r.assignment.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 7);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = random_points(20, 4, 2);
        let r = kmeans(&data, 4, 1, 0, 2).unwrap();
        let mut total = 0.0;
        for t in 0..4 {
            let col: Vec<f64> = data.chunks_exact(4).map(|x| x[t]).collect();
            let mean = col.iter().sum::<f64>() / 20.0;
            assert!((r.centroids[t] - mean).abs() < 1e-12);
            total += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        }
        assert!((r.inertia - total).abs() < 1e-9);
    }

    #[test]
    fn two_blobs_match_exhaustive_partition() {
        let data = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.5, 10.0, 10.0, 11.0, 10.0, 10.0, 12.0];
        let r = kmeans(&data, 2, 2, 3, 10).unwrap();
        // brute force over all 2-partitions of 6 points
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << 6) - 1 {
            let mut cost = 0.0;
            for side in [0, 1] {
                let members: Vec<usize> = (0..6).filter(|&i| (mask >> i) & 1 == side).collect();
                for t in 0..2 {
                    let mean = members.iter().map(|&i| data[2 * i + t]).sum::<f64>() / members.len() as f64;
                    cost += members.iter().map(|&i| (data[2 * i + t] - mean).powi(2)).sum::<f64>();
                }
            }
            best = best.min(cost);
        }
        assert!((r.inertia - best).abs() < 1e-12);
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_eq!(r.assignment[1], r.assignment[2]);
        assert_eq!(r.assignment[3], r.assignment[4]);
        assert_ne!(r.assignment[0], r.assignment[3]);
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..30 {
            let data = random_points(60, 3, seed);
            let r = kmeans(&data, 3, 1 + (seed as usize % 6), seed, 4).unwrap();
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", r.history);
            }
        }
    }

    #[test]
    fn identical_points_and_errors() {
        let data = vec![2.0; 12];
        let r = kmeans(&data, 3, 2, 0, 3).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert!(r.assignment.iter().all(|&c| c == 0));
        assert!(kmeans(&data, 3, 0, 0, 1).is_err());
        assert!(kmeans(&data, 3, 5, 0, 1).is_err());
        assert!(kmeans(&data, 5, 1, 0, 1).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let data = random_points(50, 2, 9);
        assert_eq!(kmeans(&data, 2, 4, 7, 5).unwrap(), kmeans(&data, 2, 4, 7, 5).unwrap());
    }
}
