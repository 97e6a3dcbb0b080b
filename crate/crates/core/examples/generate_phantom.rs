//! Generates a phantom dataset and writes it in the on-disk formats used by
//! the `synclass` CLI.
//!
//!     cargo run --release --example generate_phantom -- [OUT_DIR]

use std::path::PathBuf;

use synclass::synthgen::{generate, GenConfig};
use synclass::volume_io::{format_class_table, write_synapse_table, write_volume};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("synclass-phantom"));
    std::fs::create_dir_all(&out)?;

    let cfg = GenConfig::default();
    let phantom = generate(&cfg)?;
    write_volume(&phantom.intensity, &out.join("intensity.vol"))?;
    write_volume(&phantom.segmentation, &out.join("segmentation.vol"))?;
    write_synapse_table(&phantom.synapses, &out.join("synapses.csv"))?;
    let classes = format_class_table(phantom.class_of_supervoxel.iter().map(|(&sv, &c)| (sv, c)));
    std::fs::write(out.join("classes.csv"), classes)?;

    let mut per_class = std::collections::BTreeMap::new();
    for s in &phantom.synapses {
        *per_class.entry(s.class_label.unwrap_or(0)).or_insert(0) += 1;
    }
    println!("volume {:?} voxels at {:?} nm", cfg.dims, cfg.voxel_size_nm);
    println!("{} supervoxels, {} synapses", phantom.class_of_supervoxel.len(), phantom.synapses.len());
    for (class, n) in per_class {
        println!("  class {class}: {n} synapses");
    }
    println!("wrote {}", out.display());
    Ok(())
}
