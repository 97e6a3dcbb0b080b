//! Injects cross-class false merges into a phantom and audits every
//! supervoxel for a two-group split of its synapse embeddings.
//!
//!     cargo run --release --example audit_false_merges -- [CHECKPOINT]
//!
//! A trained checkpoint is needed for meaningful scores; a fresh encoder
//! mostly shows the report format.

use synclass::analysis::embed_all;
use synclass::audit::{audit_dataset, AuditConfig};
use synclass::encoder::{Encoder, EncoderConfig};
use synclass::synthgen::{generate, inject_false_merge, pick_cross_class_pairs, GenConfig};
use synclass::volume_io::EmbeddingKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let encoder = match std::env::args().nth(1) {
        Some(path) => Encoder::load(path.as_ref())?,
        None => Encoder::init(EncoderConfig::default())?,
    };
    let cfg = GenConfig::default();
    let mut phantom = generate(&cfg)?;
    let mut merges = Vec::new();
    for (a, b) in pick_cross_class_pairs(&phantom, 5, cfg.seed) {
        let (merged, info) = inject_false_merge(&phantom, a, b)?;
        phantom = merged;
        merges.push(info);
    }
    for m in &merges {
        println!("merged {} into {}; true boundary {:?}", m.absorbed_id, m.merged_id, m.boundary_midpoint);
    }

    let emb = embed_all(&encoder, &phantom.intensity, &phantom.synapses, encoder.config.patch_side, EmbeddingKind::Penultimate)?;
    let report = audit_dataset(&emb, &phantom.synapses, &AuditConfig::default())?;
    println!("{} findings:", report.findings.len());
    for f in &report.findings {
        let injected = merges.iter().any(|m| m.merged_id == f.supervoxel_id);
        println!(
            "  supervoxel {:>3} score {:.2} split {}+{} boundary {:?}{}",
            f.supervoxel_id,
            f.separation_score,
            f.n_a,
            f.n_b,
            f.boundary_estimate,
            if injected { "  (injected)" } else { "" }
        );
    }
    Ok(())
}
