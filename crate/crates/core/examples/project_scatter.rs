//! Projects embeddings onto their first two principal components and writes a
//! scatter plot colored by generator class.
//!
//!     cargo run --release --example project_scatter -- [CHECKPOINT] [SVG_PATH]

use std::path::PathBuf;

use synclass::analysis::{embed_all, emit_scatter, pca_project};
use synclass::encoder::{Encoder, EncoderConfig};
use synclass::synthgen::{generate, GenConfig};
use synclass::volume_io::EmbeddingKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let encoder = match args.next() {
        Some(path) if path != "-" => Encoder::load(path.as_ref())?,
        _ => Encoder::init(EncoderConfig::default())?,
    };
    let svg = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("synclass-scatter.svg"));

    let phantom = generate(&GenConfig::default())?;
    let emb = embed_all(&encoder, &phantom.intensity, &phantom.synapses, encoder.config.patch_side, EmbeddingKind::Penultimate)?;
    let pca = pca_project(emb.values(), emb.dim(), 2)?;
    println!("explained variance {:.3?}", pca.explained_variance);

    let coords: Vec<[f64; 2]> = pca.coords.chunks(2).map(|c| [c[0], c[1]]).collect();
    let labels: Vec<String> = phantom
        .synapses
        .iter()
        .map(|s| s.class_label.map_or_else(|| "unlabeled".into(), |c| format!("class {c}")))
        .collect();
    emit_scatter(&coords, &labels, &svg)?;
    println!("wrote {}", svg.display());
    Ok(())
}
