//! The conditional partial-residual graph convolutional network.

mod adjacency;
mod network;

pub use adjacency::{block_diagonal, normalize_adjacency};
pub use network::{
    gcn_block, CprGcnModel, LabelPrediction, ModelConfig, ModelDocument, ShortcutMode, TreeInput,
    MODEL_CONFIG_VERSION,
};
