//! Prints the architecture and parameter shapes stored in a checkpoint, or of
//! a freshly initialized encoder when no path is given.
//!
//!     cargo run --release --example inspect_checkpoint -- [CHECKPOINT]

use synclass::encoder::{describe, Encoder, EncoderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let encoder = match std::env::args().nth(1) {
        Some(path) => Encoder::load(path.as_ref())?,
        None => Encoder::init(EncoderConfig::default())?,
    };
    describe(&encoder, &mut std::io::stdout().lock())?;
    Ok(())
}
