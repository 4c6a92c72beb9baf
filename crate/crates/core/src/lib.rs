//! Train graph neural networks, attack them with embedding-extraction
//! surrogates, and decide whether a suspect model was derived from a target
//! through embedding-distance fingerprints.

pub mod error;
pub mod extraction;
pub mod fingerprint;
pub mod gnn;
pub mod graph_data;
pub mod harness;
pub mod nn;
pub mod registry;
pub mod seed;

pub use error::{Error, Result};
