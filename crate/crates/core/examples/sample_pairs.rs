//! Draws contrastive batches from a phantom and shows their provenance: every
//! positive pair comes from one supervoxel, and no supervoxel repeats within a
//! batch.

use synclass::sampler::{augment, extract_patch, seeded_rng, AugmentConfig, Dataset, Sampler, SamplerConfig};
use synclass::synthgen::{generate, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let phantom = generate(&GenConfig::default())?;
    let dataset = Dataset::new(phantom.intensity, phantom.synapses)?;
    let cfg = SamplerConfig { batch_pairs: 4, ..SamplerConfig::default() };
    let sampler = Sampler::new(&dataset, cfg)?;
    println!("{} eligible supervoxels", sampler.eligible_supervoxels().len());

    let mut rng = seeded_rng(0);
    for b in 0..3 {
        let batch = sampler.sample_batch(&dataset, &mut rng);
        println!("batch {b}:");
        for i in 0..batch.supervoxel_ids.len() {
            println!(
                "  supervoxel {:>3}: synapses {:>3} and {:>3}, view shape {:?}",
                batch.supervoxel_ids[i],
                batch.synapse_ids_a[i],
                batch.synapse_ids_b[i],
                batch.views_a[i].shape()
            );
        }
    }

    let s = &dataset.synapses[0];
    let patch = extract_patch(&dataset.intensity, s.pos.map(|c| c as i64), 16);
    let mean = |t: &synclass::numcore::Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
    let view = augment(&patch, &AugmentConfig::default(), &mut rng);
    let same = augment(&patch, &AugmentConfig::identity(), &mut rng);
    println!("patch mean {:.4}, augmented {:.4}, identity {:.4}", mean(&patch), mean(&view), mean(&same));
    Ok(())
}
