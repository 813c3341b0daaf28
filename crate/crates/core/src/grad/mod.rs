//! Reverse-mode differentiation over dense `f64` arrays.

mod array;
mod check;
mod graph;
mod optim;
mod params;

pub use array::DenseArray;
pub use check::{gradcheck, GradCheckOptions, GradCheckReport};
pub use graph::{Bindings, Evaluation, Gradients, Graph, NodeId, Op};
pub use optim::Adam;
pub use params::{checkpoint_hash, load_checkpoint, save_checkpoint, Checkpoint, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum GradError {
    #[error("array construction: {0}")]
    Construction(String),
    #[error("shape error at {node}: {detail}")]
    Shape { node: String, detail: String },
    #[error("non-finite value produced at {node} (node {index})")]
    NonFinite { node: String, index: usize },
    #[error("{node} references unbound name `{name}`")]
    Unbound { node: String, name: String },
    #[error("loss {node} has shape {shape:?}, expected a single value")]
    NonScalarLoss { node: String, shape: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
