//! Trains the encoder on a phantom, then resumes from the midpoint checkpoint
//! and checks that the resumed run lands on the same weights.
//!
//!     cargo run --release --example train_encoder -- [STEPS] [OUT_DIR] [THREADS]

use std::path::PathBuf;

use synclass::sampler::Dataset;
use synclass::synthgen::{generate, GenConfig};
use synclass::trainer::{checkpoint_path, resume, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("synclass-train"));
    let threads: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);

    let phantom = generate(&GenConfig::default())?;
    let dataset = Dataset::new(phantom.intensity, phantom.synapses)?;
    let half = (steps / 2).max(1);
    let cfg = TrainConfig { steps, checkpoint_every: half, log_every: 10, ..TrainConfig::default() };
    println!("training {} parameters for {steps} steps", cfg.encoder.param_count());

    let full = train(&cfg, &dataset, &out, threads, |m| {
        println!("step {:>5}  loss {:.4}  pos_cos {:.3}  neg_cos {:.3}", m.step, m.loss, m.pos_cos, m.neg_cos)
    })?;

    let resumed_dir = out.join("resumed");
    let again = resume(&cfg, &dataset, &resumed_dir, &checkpoint_path(&out, half), threads, |_| {})?;
    println!(
        "resumed from step {half}: final weights {}",
        if again.state.encoder == full.state.encoder { "identical" } else { "DIFFERENT" }
    );
    println!("final checkpoint {}", full.final_checkpoint.display());
    Ok(())
}
