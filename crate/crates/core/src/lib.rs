//! Transformer-based generation of synthetic road-link trajectories, with
//! connectivity-constrained decoding, gravity-weighted sampling and
//! preference-based fine-tuning.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod generate;
pub mod meta;
pub mod nn;
pub mod pipeline;
pub mod pretrain;
pub mod rltf;
pub mod roadnet;
pub mod seed;
pub mod synthworld;

pub use error::{Error, Result};

/// Sizes the global worker pool. Must run before any parallel work.
pub fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| Error::config("threads", e.to_string()))
}
