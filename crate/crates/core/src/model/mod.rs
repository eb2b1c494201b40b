//! Fully connected networks: architectures, initialization, forward and
//! backward passes, and checkpoints.

mod arch;
mod checkpoint;
mod matrix;
mod mlp;

pub use arch::{
    solve_width_for_budget, with_free_dim, Activation, FreeDim, LayerSpec, MlpArch, Parameterization,
    SparseSpec, Variant, WidthSolution,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use matrix::Mat;
pub use mlp::{argmax_columns, factorize_layer, Gradients, Layer, LayerGrad, MlpModel};

use crate::mask::MaskError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("bottleneck rank {rank} of layer {layer} exceeds {max}")]
    RankTooLarge { layer: usize, rank: usize, max: usize },
    #[error("budget {budget} is below the smallest realizable count {minimum}")]
    BudgetTooSmall { budget: u64, minimum: u64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
