use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITER: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `out_dim` unit rows of length D; zero rows pad a rank-deficient input.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues (sample covariance, M−1 denominator).
    pub eigenvalues: Vec<f64>,
    /// Eigenvalue over total variance, one per component.
    pub explained_variance: Vec<f64>,
    /// M×out_dim row-major projected coordinates.
    pub coords: Vec<f64>,
    /// How many trailing components were zero-padded.
    pub padded: usize,
}

fn mat_vec(c: &[f64], v: &[f64]) -> Vec<f64> {
    c.chunks_exact(v.len()).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Projects M×`dim` rows onto the top `out_dim` principal axes, found by power
/// iteration on the covariance with deflation against earlier components.
pub fn pca_project(data: &[f64], dim: usize, out_dim: usize) -> Result<Pca> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::invalid("PCA input", format!("{} values do not form rows of {dim}", data.len())));
    }
    let m = data.len() / dim;
    if out_dim == 0 || m <= out_dim {
        return Err(Error::invalid("PCA input", format!("need more than {out_dim} rows, got {m}")));
    }
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let centered: Vec<f64> = data.chunks_exact(dim).flat_map(|r| r.iter().zip(&mean).map(|(v, a)| v - a)).collect();
    let mut cov = vec![0.0; dim * dim];
    for row in centered.chunks_exact(dim) {
        for i in 0..dim {
            for j in i..dim {
                cov[i * dim + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / (m - 1) as f64;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(out_dim);
    let mut eigenvalues = Vec::with_capacity(out_dim);
    let mut padded = 0;
    let deflate = |v: &mut Vec<f64>, found: &[Vec<f64>]| {
        for u in found {
            let p = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
    };
    for _ in 0..out_dim {
        let found: Vec<Vec<f64>> = components.iter().filter(|c| c.iter().any(|&x| x != 0.0)).cloned().collect();
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        deflate(&mut v, &found);
        let mut ok = normalize(&mut v) > 0.0;
        let mut iter = 0;
        while ok && iter < POWER_MAX_ITER {
            iter += 1;
            let mut w = mat_vec(&cov, &v);
            deflate(&mut w, &found);
            if normalize(&mut w) <= trace * f64::EPSILON {
                ok = false;
                break;
            }
            let diff = v.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            v = w;
            if diff < POWER_TOL {
                break;
            }
        }
        let lambda = if ok { dot(&v, &mat_vec(&cov, &v)) } else { 0.0 };
        // eigenvalues at rounding level count as absent
        if !ok || lambda <= trace * 1e-12 || lambda <= 0.0 {
            padded += 1;
            components.push(vec![0.0; dim]);
            eigenvalues.push(0.0);
            continue;
        }
        fix_sign(&mut v);
        components.push(v);
        eigenvalues.push(lambda);
    }
    let explained_variance = eigenvalues.iter().map(|&l| if trace > 0.0 { l / trace } else { 0.0 }).collect();
    let coords = centered
        .chunks_exact(dim)
        .flat_map(|row| components.iter().map(move |c| dot(row, c)))
        .collect();
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        explained_variance,
        coords,
        padded,
    })
}
