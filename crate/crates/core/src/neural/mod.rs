//! Dense + GRU Q-network with hand-written backpropagation through time,
//! the Adam optimizer and the checkpoint format.

mod adam;
mod checkpoint;
mod net;
mod scalar;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Architecture, CheckpointManifest, SliceEntry, ARCHITECTURE, CHECKPOINT_FORMAT,
    MANIFEST_FILE,
};
pub use net::{HiddenState, InitScheme, NetParams, NetShape, SeqCache};
pub use scalar::{gemm, Scalar};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("{what}: expected {expected} values, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
