//! Measures how well a small labeled set covers the embedding space and
//! proposes the next synapses to label by farthest-point selection.
//!
//!     cargo run --release --example select_annotations -- [CHECKPOINT]

use synclass::analysis::embed_all;
use synclass::encoder::{Encoder, EncoderConfig};
use synclass::selector::select_with_report;
use synclass::synthgen::{generate, GenConfig};
use synclass::volume_io::EmbeddingKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let encoder = match std::env::args().nth(1) {
        Some(path) => Encoder::load(path.as_ref())?,
        None => Encoder::init(EncoderConfig::default())?,
    };
    let phantom = generate(&GenConfig::default())?;
    let emb = embed_all(&encoder, &phantom.intensity, &phantom.synapses, encoder.config.patch_side, EmbeddingKind::Penultimate)?;

    // pretend only the synapses of the first supervoxel are annotated
    let first = phantom.synapses[0].supervoxel_id;
    let labeled: Vec<u64> = phantom.synapses.iter().filter(|s| s.supervoxel_id == first).map(|s| s.id).collect();
    let (picked, report) = select_with_report(&emb, &labeled, 10, None, 0)?;
    println!("radius {:.4}", report.radius);
    println!("coverage {:.3} -> {:.3}", report.coverage_before, report.coverage_after);
    let class_of = |id: u64| phantom.synapses.iter().find(|s| s.id == id).and_then(|s| s.class_label);
    for id in picked {
        println!("  label synapse {id:>3} (class {:?})", class_of(id));
    }
    Ok(())
}
