use std::collections::BTreeMap;

use crate::error::{Error, Result};

struct Contingency {
    n: f64,
    cells: BTreeMap<(u64, u64), f64>,
    rows: BTreeMap<u64, f64>,
    cols: BTreeMap<u64, f64>,
}

fn contingency(a: &[u64], b: &[u64]) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(Error::invalid("labelings", format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("labelings", "empty input".to_string()));
    }
    let mut t = Contingency {
        n: a.len() as f64,
        cells: BTreeMap::new(),
        rows: BTreeMap::new(),
        cols: BTreeMap::new(),
    };
    for (&x, &y) in a.iter().zip(b) {
        *t.cells.entry((x, y)).or_default() += 1.0;
        *t.rows.entry(x).or_default() += 1.0;
        *t.cols.entry(y).or_default() += 1.0;
    }
    Ok(t)
}

fn entropy(counts: &BTreeMap<u64, f64>, n: f64) -> f64 {
    -counts.values().map(|&c| (c / n) * (c / n).ln()).sum::<f64>()
}

/// Normalized mutual information with arithmetic-mean normalization and
/// natural logarithms; `0/0` is taken as 0.
pub fn nmi(a: &[u64], b: &[u64]) -> Result<f64> {
    let t = contingency(a, b)?;
    let n = t.n;
    let mi: f64 = t
        .cells
        .iter()
        .map(|(&(x, y), &c)| (c / n) * ((c * n) / (t.rows[&x] * t.cols[&y])).ln())
        .sum();
    let denom = 0.5 * (entropy(&t.rows, n) + entropy(&t.cols, n));
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index by pair counting; `0/0` is taken as 0.
pub fn ari(a: &[u64], b: &[u64]) -> Result<f64> {
    let t = contingency(a, b)?;
    let index: f64 = t.cells.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = t.rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = t.cols.values().map(|&c| choose2(c)).sum();
    let pairs = choose2(t.n);
    if pairs == 0.0 {
        return Ok(0.0);
    }
    let expected = sum_a * sum_b / pairs;
    let max = 0.5 * (sum_a + sum_b);
    if max - expected == 0.0 {
        return Ok(0.0);
    }
    Ok((index - expected) / (max - expected))
}
