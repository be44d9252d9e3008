//! Minimal deterministic neural-network engine: tensors, the U-Net layer set,
//! reverse-mode gradients, focal loss, Adam, and checkpoints.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use graph::{ForwardCache, GraphBuilder, LayerKind, LayerSpec, Network};
pub use layers::Padding;
pub use loss::{focal_loss, LossConfig};
pub use optim::{adam_step, AdamConfig};
pub use params::{Gradients, Param, ParamStore};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called without a matching forward cache")]
    MissingForwardCache,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
