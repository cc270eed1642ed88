//! Small reverse-mode differentiation engine: dense tensors, a recorded
//! graph of the operations the descriptor needs, and Adam.

mod conv;
mod graph;
mod params;
mod tensor;

pub use conv::{conv_backward, conv_forward, Boundary, ConvSpec};
pub use graph::{Gradients, Graph, NodeId};
pub use params::{AdamConfig, ParamGrads, ParamId, ParamStore, CHECKPOINT_MAGIC};
pub use tensor::Tensor;
