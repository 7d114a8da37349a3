//! Self-contained differentiable computation: dense matrices, a reverse-mode
//! tape, GCN and linear layers, Dirichlet machinery, and Adam.

pub mod checkpoint;
pub mod dirichlet;
pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod params;
pub mod special;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use dirichlet::DirichletDist;
pub use layers::{gcn_layer, GcnLayer, Linear};
pub use matrix::Matrix;
pub use params::{Adam, AdamConfig, ParamId, ParamSet, ParamTensor, TensorRecord};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite value in parameter {0} after update")]
    NonFiniteParameter(String),
    #[error("invalid Dirichlet concentration: {0}")]
    InvalidConcentration(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
}
