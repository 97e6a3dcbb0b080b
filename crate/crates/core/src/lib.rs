pub mod analysis;
pub mod audit;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod ntxent;
pub mod numcore;
pub mod sampler;
pub mod selector;
pub mod synthgen;
pub mod trainer;
pub mod volume_io;

pub use error::{Error, Result};
