//! Inductive GraphSAGE, GAT and GIN node classifiers with neighbor sampling.

mod config;
mod format;
mod layers;
mod model;
mod prune;
mod sampling;
mod train;

pub use config::{Architecture, GnnConfig};
pub use format::{MAGIC, VERSION};
pub use layers::{layer_forward, GatLayer, GinLayer, GnnLayer, LayerCache, SageLayer};
pub use model::{ForwardCache, GnnModel};
pub use prune::{is_prunable, prune, weight_count};
pub use sampling::{build_blocks, sample_neighbors, Block};
pub use train::{fine_tune, train, TrainReport, FINE_TUNE_LR_SCALE};

#[cfg(test)]
mod tests;
