//! Coverage of the embedding space by a labeled subset, and greedy
//! farthest-point proposals for what to label next.

use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::EmbeddingMatrix;

/// Sample size for [`default_radius`].
pub const RADIUS_SAMPLE: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectReport {
    pub coverage_before: f64,
    pub coverage_after: f64,
    pub radius: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn labeled_rows(all: &EmbeddingMatrix, labeled_ids: &[u64]) -> Result<Vec<usize>> {
    let mut rows = Vec::with_capacity(labeled_ids.len());
    let mut seen = HashSet::new();
    for &id in labeled_ids {
        let row = all
            .position(id)
            .ok_or_else(|| Error::invalid("labeled ids", format!("synapse id {id} is not in the embeddings")))?;
        if seen.insert(row) {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Fraction of points within Euclidean distance `r` of some labeled point.
pub fn coverage(all: &EmbeddingMatrix, labeled_ids: &[u64], r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::invalid("radius", format!("must be > 0, got {r}")));
    }
    let labeled = labeled_rows(all, labeled_ids)?;
    let covered = all
        .rows()
        .filter(|x| labeled.iter().any(|&l| sq_dist(x, all.row(l)).sqrt() <= r))
        .count();
    Ok(covered as f64 / all.len() as f64)
}

/// Greedy farthest-point selection of `k` unlabeled ids. Each pick maximizes
/// the distance to everything labeled or already picked; with nothing
/// labeled the first pick is the point farthest from the centroid. Ties go to
/// the lowest synapse id.
pub fn select_k(all: &EmbeddingMatrix, labeled_ids: &[u64], k: usize) -> Result<Vec<u64>> {
    let labeled = labeled_rows(all, labeled_ids)?;
    let m = all.len();
    let unlabeled = m - labeled.len();
    if k > unlabeled {
        return Err(Error::invalid("k", format!("{k} requested but only {unlabeled} points are unlabeled")));
    }
    let ids = all.synapse_ids();
    let mut taken = vec![false; m];
    let mut min_d2 = vec![f64::INFINITY; m];
    let absorb = |row: usize, taken: &mut Vec<bool>, min_d2: &mut Vec<f64>| {
        taken[row] = true;
        for (i, d) in min_d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(all.row(i), all.row(row)));
        }
    };
    for &l in &labeled {
        absorb(l, &mut taken, &mut min_d2);
    }
    if labeled.is_empty() && k > 0 {
        let dim = all.dim();
        let mut centroid = vec![0.0; dim];
        for row in all.rows() {
            centroid.iter_mut().zip(row).for_each(|(c, v)| *c += v);
        }
        centroid.iter_mut().for_each(|c| *c /= m as f64);
        for (i, d) in min_d2.iter_mut().enumerate() {
            *d = sq_dist(all.row(i), &centroid);
        }
    }
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in (0..m).filter(|&i| !taken[i]) {
            best = match best {
                Some(b) if min_d2[b] > min_d2[i] || (min_d2[b] == min_d2[i] && ids[b] < ids[i]) => Some(b),
                _ => Some(i),
            };
        }
        let b = best.expect("k <= unlabeled count");
        if picked.is_empty() && labeled.is_empty() {
            // the centroid scores only seed the first pick
            min_d2.fill(f64::INFINITY);
        }
        absorb(b, &mut taken, &mut min_d2);
        picked.push(ids[b]);
    }
    Ok(picked)
}

/// Median pairwise distance over a seeded sample of up to
/// [`RADIUS_SAMPLE`] points (mean of the two middle values for an even count).
pub fn default_radius(all: &EmbeddingMatrix, seed: u64) -> Result<f64> {
    let m = all.len();
    if m < 2 {
        return Err(Error::invalid("embeddings", "need at least two points for a radius".to_string()));
    }
    let mut rows: Vec<usize> = if m <= RADIUS_SAMPLE {
        (0..m).collect()
    } else {
        index::sample(&mut ChaCha8Rng::seed_from_u64(seed), m, RADIUS_SAMPLE).into_vec()
    };
    rows.sort_unstable();
    let mut d: Vec<f64> = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            d.push(sq_dist(all.row(i), all.row(j)).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let r = if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / 2.0 };
    Ok(r)
}

/// Picks `k` ids and reports coverage at `radius` (default: [`default_radius`])
/// before and after adding them to the labeled set.
pub fn select_with_report(
    all: &EmbeddingMatrix,
    labeled_ids: &[u64],
    k: usize,
    radius: Option<f64>,
    seed: u64,
) -> Result<(Vec<u64>, SelectReport)> {
    let radius = match radius {
        Some(r) => r,
        None => default_radius(all, seed)?,
    };
    let picked = select_k(all, labeled_ids, k)?;
    let coverage_before = coverage(all, labeled_ids, radius)?;
    let after: Vec<u64> = labeled_ids.iter().chain(&picked).copied().collect();
    let coverage_after = coverage(all, &after, radius)?;
    Ok((
        picked,
        SelectReport {
            coverage_before,
            coverage_after,
            radius,
        },
    ))
}
