//! Embedding extraction, projection, clustering and agreement scores.

mod kmeans;
mod metrics;
mod pca;
mod scatter;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, KMeans, MAX_LLOYD_ITERATIONS};
pub use metrics::{ari, nmi};
pub use pca::{pca_project, Pca, POWER_MAX_ITER, POWER_TOL};
pub use scatter::{data_window, emit_scatter, render_scatter, MARGIN_FRACTION};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::sampler::extract_patch;
use crate::volume_io::{format_g17, EmbeddingKind, EmbeddingMatrix, IntensityVolume, SynapseRecord};

/// Cross-supervoxel pairs sampled by [`concordance`] when there are more.
pub const INTER_SAMPLE: usize = 10_000;
pub const DEFAULT_N_INIT: usize = 10;

/// One row per synapse in table order, computed on un-augmented patches.
/// Runs on the current rayon pool.
pub fn embed_all(
    encoder: &Encoder,
    intensity: &IntensityVolume,
    synapses: &[SynapseRecord],
    patch_side: usize,
    kind: EmbeddingKind,
) -> Result<EmbeddingMatrix> {
    if patch_side != encoder.config.patch_side {
        return Err(Error::invalid(
            "patch_side",
            format!("{patch_side} requested but the checkpoint was built for {}", encoder.config.patch_side),
        ));
    }
    let rows = synapses
        .par_iter()
        .map(|s| {
            let center = s.pos.map(|c| c as i64);
            let out = encoder.forward(&extract_patch(intensity, center, patch_side))?;
            Ok(match kind {
                EmbeddingKind::Penultimate => out.h.into_data(),
                EmbeddingKind::Projected => out.z.into_data(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = match kind {
        EmbeddingKind::Penultimate => encoder.config.h_dim,
        EmbeddingKind::Projected => encoder.config.z_dim,
    };
    EmbeddingMatrix::new(synapses.iter().map(|s| s.id).collect(), dim, rows.concat(), kind)
}

/// Table records matching each embedding row. Fails on the first embedding
/// id missing from the table.
pub fn align_records<'a>(emb: &EmbeddingMatrix, synapses: &'a [SynapseRecord]) -> Result<Vec<&'a SynapseRecord>> {
    let by_id: HashMap<u64, &SynapseRecord> = synapses.iter().map(|s| (s.id, s)).collect();
    emb.synapse_ids()
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::invalid("embeddings", format!("synapse id {id} is not in the synapse table")))
        })
        .collect()
}

/// Ground-truth class of every embedding row.
pub fn class_labels(emb: &EmbeddingMatrix, synapses: &[SynapseRecord]) -> Result<Vec<u64>> {
    align_records(emb, synapses)?
        .into_iter()
        .map(|r| {
            r.class_label
                .map(u64::from)
                .ok_or_else(|| Error::invalid("synapse table", format!("synapse {} has no class_label", r.id)))
        })
        .collect()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Mean cosine over all within-supervoxel pairs and over cross-supervoxel
/// pairs (all of them, or [`INTER_SAMPLE`] drawn with replacement).
pub fn concordance(emb: &EmbeddingMatrix, synapses: &[SynapseRecord], seed: u64) -> Result<(f64, f64)> {
    let records = align_records(emb, synapses)?;
    let sv: Vec<u64> = records.iter().map(|r| r.supervoxel_id).collect();
    let m = sv.len();
    let (mut intra, mut n_intra) = (0.0, 0usize);
    let mut n_inter = 0usize;
    for i in 0..m {
        for j in i + 1..m {
            if sv[i] == sv[j] {
                intra += cosine(emb.row(i), emb.row(j));
                n_intra += 1;
            } else {
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        return Err(Error::invalid(
            "concordance input",
            "need at least two supervoxels and one supervoxel with two synapses".to_string(),
        ));
    }
    let inter = if n_inter <= INTER_SAMPLE {
        let mut total = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                if sv[i] != sv[j] {
                    total += cosine(emb.row(i), emb.row(j));
                }
            }
        }
        total / n_inter as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        let mut drawn = 0;
        while drawn < INTER_SAMPLE {
            let (i, j) = (rng.random_range(0..m), rng.random_range(0..m));
            if sv[i] != sv[j] {
                total += cosine(emb.row(i), emb.row(j));
                drawn += 1;
            }
        }
        total / INTER_SAMPLE as f64
    };
    Ok((intra / n_intra as f64, inter))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nmi: f64,
    pub ari: f64,
    pub inertia: f64,
    pub intra: f64,
    pub inter: f64,
    pub explained_variance: Vec<f64>,
}

/// k-means (k, seed, ten restarts) against the table's class labels, plus
/// concordance and the two leading PCA variance fractions.
pub fn evaluate(emb: &EmbeddingMatrix, synapses: &[SynapseRecord], k: usize, seed: u64) -> Result<EvalReport> {
    let truth = class_labels(emb, synapses)?;
    let km = kmeans(emb.values(), emb.dim(), k, seed, DEFAULT_N_INIT)?;
    let clusters: Vec<u64> = km.assignment.iter().map(|&c| c as u64).collect();
    let (intra, inter) = concordance(emb, synapses, seed)?;
    let pca = pca_project(emb.values(), emb.dim(), 2.min(emb.len() - 1).max(1))?;
    Ok(EvalReport {
        nmi: nmi(&truth, &clusters)?,
        ari: ari(&truth, &clusters)?,
        inertia: km.inertia,
        intra,
        inter,
        explained_variance: pca.explained_variance,
    })
}

/// `id,pc0,pc1,…` CSV of projected coordinates.
pub fn format_coords(ids: &[u64], coords: &[f64], out_dim: usize) -> String {
    let mut s = String::from("id");
    for c in 0..out_dim {
        s.push_str(&format!(",pc{c}"));
    }
    s.push('\n');
    for (id, row) in ids.iter().zip(coords.chunks_exact(out_dim)) {
        s.push_str(&id.to_string());
        for v in row {
            s.push(',');
            s.push_str(&format_g17(*v));
        }
        s.push('\n');
    }
    s
}
