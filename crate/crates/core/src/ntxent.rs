//! NT-Xent contrastive loss over `2N` unit embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Rows of `Z` must have unit norm within this tolerance.
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NTXentConfig {
    pub temperature: f64,
}

impl Default for NTXentConfig {
    fn default() -> Self {
        NTXentConfig { temperature: 0.5 }
    }
}

impl NTXentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature", format!("must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Pairing used by the trainer: rows `0..N` are first views, rows `N..2N`
/// the matching second views.
pub fn split_pairing(n: usize) -> Vec<usize> {
    (0..2 * n).map(|i| (i + n) % (2 * n)).collect()
}

fn check_pairing(partner: &[usize]) -> Result<()> {
    for (i, &p) in partner.iter().enumerate() {
        if p >= partner.len() || p == i || partner[p] != i {
            return Err(Error::invalid(
                "pairing",
                format!("must be a fixed-point-free involution, row {i} maps to {p}"),
            ));
        }
    }
    Ok(())
}

/// Loss value and gradient with respect to the rows of `z: [2N, D]`.
pub fn loss(z: &Tensor, partner: &[usize], cfg: &NTXentConfig) -> Result<(f64, Tensor)> {
    cfg.validate()?;
    if z.rank() != 2 {
        return Err(Error::shape("ntxent", format!("Z must be [2N, D], got {:?}", z.shape())));
    }
    let (rows, d) = (z.shape()[0], z.shape()[1]);
    if rows == 0 || rows % 2 != 0 || partner.len() != rows {
        return Err(Error::invalid(
            "batch",
            format!("need 2N >= 2 rows with a partner each, got {rows} rows and {} partners", partner.len()),
        ));
    }
    check_pairing(partner)?;
    for (i, row) in z.data().chunks_exact(d).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid("embedding", format!("row {i} has norm {norm}, expected 1")));
        }
    }
    Ok(loss_unchecked(z, partner, cfg.temperature))
}

/// Same formula without the unit-row check, so the gradient can be probed
/// off the sphere.
pub(crate) fn loss_unchecked(z: &Tensor, partner: &[usize], tau: f64) -> (f64, Tensor) {
    let (rows, d) = (z.shape()[0], z.shape()[1]);
    let zr: Vec<&[f64]> = z.data().chunks_exact(d).collect();
    let sim = |i: usize, k: usize| zr[i].iter().zip(zr[k]).map(|(a, b)| a * b).sum::<f64>() / tau;

    // coeff[i][k] = (P_ik − δ_{k,partner(i)}) / (2Nτ)
    let scale = 1.0 / (rows as f64 * tau);
    let mut coeff = vec![0.0; rows * rows];
    let mut total = 0.0;
    let mut s = vec![0.0; rows];
    for i in 0..rows {
        for (k, sk) in s.iter_mut().enumerate() {
            *sk = if k == i { f64::NEG_INFINITY } else { sim(i, k) };
        }
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = s.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - s[partner[i]];
        let row = &mut coeff[i * rows..(i + 1) * rows];
        for k in 0..rows {
            let p = if k == i { 0.0 } else { (s[k] - lse).exp() };
            row[k] = p * scale;
        }
        row[partner[i]] -= scale;
    }

    let mut grad = vec![0.0; rows * d];
    for i in 0..rows {
        for k in 0..rows {
            let c = coeff[i * rows + k];
            if c == 0.0 {
                continue;
            }
            for t in 0..d {
                grad[i * d + t] += c * zr[k][t];
                grad[k * d + t] += c * zr[i][t];
            }
        }
    }
    (total / rows as f64, Tensor::from_vec(&[rows, d], grad).expect("shape matches"))
}
