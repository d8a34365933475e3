//! Dense `f64` tensors, a tensor-level differentiation tape, Adam, and
//! parameter checkpoints.

mod adam;
mod checkpoint;
mod dense;
mod kernels;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, ManifestEntry, CHECKPOINT_VERSION,
};
pub use dense::Tensor;
pub use params::{BoundParams, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
