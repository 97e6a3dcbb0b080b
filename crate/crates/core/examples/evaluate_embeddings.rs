//! Embeds every synapse of a phantom and scores the embeddings: k-means
//! against the generator classes (NMI, ARI) and same- versus
//! different-supervoxel cosine concordance.
//!
//!     cargo run --release --example evaluate_embeddings -- [CHECKPOINT]
//!
//! Without a checkpoint the freshly initialized encoder is scored.

use synclass::analysis::{embed_all, evaluate};
use synclass::encoder::{Encoder, EncoderConfig};
use synclass::synthgen::{generate, GenConfig};
use synclass::volume_io::EmbeddingKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let encoder = match std::env::args().nth(1) {
        Some(path) => Encoder::load(path.as_ref())?,
        None => Encoder::init(EncoderConfig::default())?,
    };
    let phantom = generate(&GenConfig::default())?;
    let side = encoder.config.patch_side;
    for kind in [EmbeddingKind::Penultimate, EmbeddingKind::Projected] {
        let emb = embed_all(&encoder, &phantom.intensity, &phantom.synapses, side, kind)?;
        let r = evaluate(&emb, &phantom.synapses, 3, 0)?;
        println!(
            "{:<11} NMI {:.3}  ARI {:.3}  concordance intra {:.3} inter {:.3}  top PCs {:.2?}",
            kind.as_str(),
            r.nmi,
            r.ari,
            r.intra,
            r.inter,
            r.explained_variance
        );
    }
    Ok(())
}
