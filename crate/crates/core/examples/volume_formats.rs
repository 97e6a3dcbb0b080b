//! Writes and reads back every file format: volumes, synapse tables and
//! embedding matrices, checking that each round trip is bit-exact.

use synclass::volume_io::{
    format_embeddings, parse_embeddings, read_intensity, read_segmentation, read_synapse_table, write_synapse_table,
    write_volume, EmbeddingKind, EmbeddingMatrix, IntensityVolume, SegmentationVolume, SynapseRecord,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("synclass-formats");
    std::fs::create_dir_all(&dir)?;

    let dims = [4, 3, 2];
    let intensity = IntensityVolume::new(dims, [8.0, 8.0, 40.0], (0..24).map(|v| v * 10).collect())?;
    let segmentation = SegmentationVolume::new(dims, [8.0, 8.0, 40.0], (0..24).map(|v| v / 6 + 1).collect())?;
    write_volume(&intensity, &dir.join("i.vol"))?;
    write_volume(&segmentation, &dir.join("s.vol"))?;
    assert_eq!(read_intensity(&dir.join("i.vol"))?, intensity);
    assert_eq!(read_segmentation(&dir.join("s.vol"))?, segmentation);
    println!("volumes: {} bytes u8, {} bytes u64", intensity.to_bytes().len(), segmentation.to_bytes().len());

    let synapses = vec![
        SynapseRecord { id: 1, pos: [0, 0, 0], supervoxel_id: 1, class_label: Some(2) },
        SynapseRecord { id: 7, pos: [3, 2, 1], supervoxel_id: 4, class_label: None },
    ];
    write_synapse_table(&synapses, &dir.join("synapses.csv"))?;
    assert_eq!(read_synapse_table(&dir.join("synapses.csv"))?, synapses);
    println!("synapse table:\n{}", std::fs::read_to_string(dir.join("synapses.csv"))?);

    let values = vec![0.1, -2.5e-300, std::f64::consts::PI, 1.0 / 3.0];
    let emb = EmbeddingMatrix::new(vec![1, 7], 2, values, EmbeddingKind::Penultimate)?;
    let text = format_embeddings(&emb);
    let back = parse_embeddings(&text, "in-memory")?;
    assert!(back.values().iter().zip(emb.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    println!("embeddings:\n{text}");
    Ok(())
}
