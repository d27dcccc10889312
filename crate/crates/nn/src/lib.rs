//! Dense tensors, a define-by-run reverse-mode differentiation graph, the
//! layers used by the navigation agents, the Adam optimizer and the binary
//! checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{load_checkpoint, load_into, save_checkpoint, LoadMode, LoadReport};
pub use error::{NnError, Result};
pub use graph::{Conv2dSpec, Grads, Graph, Var};
pub use params::ParameterSet;
pub use scalar::{DType, Real};
pub use tensor::Tensor;
