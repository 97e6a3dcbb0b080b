//! False-merge audit: flags supervoxels whose synapse embeddings split into
//! two well-separated groups, and estimates where the two fragments meet.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{align_records, kmeans};
use crate::error::{Error, Result};
use crate::volume_io::{format_g17, EmbeddingMatrix, SynapseRecord, DEFAULT_VOXEL_SIZE_NM};

/// Added to the spread sum so identical embeddings score 0 rather than NaN.
pub const SCORE_EPS: f64 = 1e-9;
pub const SUMMARY_HEADER: &str = "supervoxel_id,score,n_a,n_b,bx,by,bz";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossPairRule {
    /// Midpoint of the closest pair of synapses from different groups.
    #[default]
    ClosestPairMidpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub separation_threshold: f64,
    pub min_side: usize,
    pub cross_pair_rule: CrossPairRule,
    pub seed: u64,
    pub n_init: usize,
    /// Metric for the boundary search.
    pub voxel_size_nm: [f64; 3],
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            separation_threshold: 4.0,
            min_side: 2,
            cross_pair_rule: CrossPairRule::ClosestPairMidpoint,
            seed: 0,
            n_init: 10,
            voxel_size_nm: DEFAULT_VOXEL_SIZE_NM,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.separation_threshold > 0.0 && self.separation_threshold.is_finite()) {
            return Err(Error::invalid(
                "audit config",
                format!("separation_threshold must be > 0, got {}", self.separation_threshold),
            ));
        }
        if self.min_side < 1 || self.n_init < 1 {
            return Err(Error::invalid("audit config", "min_side and n_init must be >= 1".to_string()));
        }
        if self.voxel_size_nm.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("audit config", "voxel_size_nm entries must be > 0".to_string()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub supervoxel_id: u64,
    pub separation_score: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Voxel coordinates.
    pub boundary_estimate: [f64; 3],
    /// Group `a` holds the supervoxel's first synapse in input order.
    pub members_a: Vec<u64>,
    pub members_b: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AuditOutcome {
    /// Fewer than `2·min_side` synapses.
    NotAuditable { synapses: usize },
    NoFinding { separation_score: f64 },
    Finding(AuditFinding),
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Splits one supervoxel's embeddings (`dim` columns, one row per synapse)
/// with seeded 2-means and scores the split as
/// `‖c₁ − c₂‖ / (s₁ + s₂ + ε)`, `s` being the mean member-to-centroid distance.
pub fn audit_supervoxel(
    supervoxel_id: u64,
    values: &[f64],
    dim: usize,
    ids: &[u64],
    positions: &[[usize; 3]],
    cfg: &AuditConfig,
) -> Result<AuditOutcome> {
    cfg.validate()?;
    let m = ids.len();
    if positions.len() != m || values.len() != m * dim {
        return Err(Error::shape("audit", format!("{m} ids, {} positions, {} values", positions.len(), values.len())));
    }
    if m < 2 * cfg.min_side {
        return Ok(AuditOutcome::NotAuditable { synapses: m });
    }
    let km = kmeans(values, dim, 2, cfg.seed, cfg.n_init)?;
    // name groups so that `a` holds row 0
    let a_label = km.assignment[0];
    let in_a: Vec<bool> = km.assignment.iter().map(|&c| c == a_label).collect();
    let rows: Vec<&[f64]> = values.chunks_exact(dim).collect();
    let centroid = |side: bool| -> Option<Vec<f64>> {
        let members: Vec<&[f64]> = rows.iter().zip(&in_a).filter(|(_, &s)| s == side).map(|(r, _)| *r).collect();
        if members.is_empty() {
            return None;
        }
        let mut c = vec![0.0; dim];
        for r in &members {
            c.iter_mut().zip(*r).for_each(|(a, v)| *a += v);
        }
        c.iter_mut().for_each(|a| *a /= members.len() as f64);
        let spread = members.iter().map(|r| dist(r, &c)).sum::<f64>() / members.len() as f64;
        Some([c, vec![spread]].concat())
    };
    let (ca, cb) = match (centroid(true), centroid(false)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Ok(AuditOutcome::NoFinding { separation_score: 0.0 }),
    };
    let score = dist(&ca[..dim], &cb[..dim]) / (ca[dim] + cb[dim] + SCORE_EPS);
    let n_a = in_a.iter().filter(|&&s| s).count();
    let n_b = m - n_a;
    if !(score > cfg.separation_threshold && n_a >= cfg.min_side && n_b >= cfg.min_side) {
        return Ok(AuditOutcome::NoFinding { separation_score: score });
    }

    let vs = cfg.voxel_size_nm;
    let mut best = (f64::INFINITY, 0, 0);
    for i in (0..m).filter(|&i| in_a[i]) {
        for j in (0..m).filter(|&j| !in_a[j]) {
            let d2: f64 = (0..3).map(|t| ((positions[i][t] as f64 - positions[j][t] as f64) * vs[t]).powi(2)).sum();
            if d2 < best.0 {
                best = (d2, i, j);
            }
        }
    }
    let (_, i, j) = best;
    let boundary_estimate = [0, 1, 2].map(|t| (positions[i][t] as f64 + positions[j][t] as f64) / 2.0);
    Ok(AuditOutcome::Finding(AuditFinding {
        supervoxel_id,
        separation_score: score,
        n_a,
        n_b,
        boundary_estimate,
        members_a: (0..m).filter(|&k| in_a[k]).map(|k| ids[k]).collect(),
        members_b: (0..m).filter(|&k| !in_a[k]).map(|k| ids[k]).collect(),
    }))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    /// Sorted by score descending, then supervoxel id ascending.
    pub findings: Vec<AuditFinding>,
    /// Every auditable supervoxel's score, by id.
    pub scores: BTreeMap<u64, f64>,
    /// Supervoxels with too few synapses, with their synapse counts.
    pub not_auditable: Vec<(u64, usize)>,
}

/// Audits every supervoxel of the table that has embedded synapses. Runs on
/// the current rayon pool; the result does not depend on its size.
pub fn audit_dataset(emb: &EmbeddingMatrix, synapses: &[SynapseRecord], cfg: &AuditConfig) -> Result<AuditReport> {
    cfg.validate()?;
    let records = align_records(emb, synapses)?;
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (row, r) in records.iter().enumerate() {
        groups.entry(r.supervoxel_id).or_default().push(row);
    }
    let dim = emb.dim();
    let groups: Vec<(u64, Vec<usize>)> = groups.into_iter().collect();
    let outcomes = groups
        .par_iter()
        .map(|(sv, rows)| {
            let values: Vec<f64> = rows.iter().flat_map(|&r| emb.row(r).iter().copied()).collect();
            let ids: Vec<u64> = rows.iter().map(|&r| records[r].id).collect();
            let pos: Vec<[usize; 3]> = rows.iter().map(|&r| records[r].pos).collect();
            audit_supervoxel(*sv, &values, dim, &ids, &pos, cfg).map(|o| (*sv, o))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = AuditReport::default();
    for (sv, outcome) in outcomes {
        match outcome {
            AuditOutcome::NotAuditable { synapses } => report.not_auditable.push((sv, synapses)),
            AuditOutcome::NoFinding { separation_score } => {
                report.scores.insert(sv, separation_score);
            }
            AuditOutcome::Finding(f) => {
                report.scores.insert(sv, f.separation_score);
                report.findings.push(f);
            }
        }
    }
    report.findings.sort_by(|a, b| {
        b.separation_score
            .total_cmp(&a.separation_score)
            .then(a.supervoxel_id.cmp(&b.supervoxel_id))
    });
    Ok(report)
}

pub fn findings_json(findings: &[AuditFinding]) -> Result<String> {
    Ok(serde_json::to_string_pretty(findings)? + "\n")
}

pub fn findings_csv(findings: &[AuditFinding]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for f in findings {
        let [x, y, z] = f.boundary_estimate.map(format_g17);
        writeln!(s, "{},{},{},{},{x},{y},{z}", f.supervoxel_id, format_g17(f.separation_score), f.n_a, f.n_b)
            .expect("writing to a String");
    }
    s
}
