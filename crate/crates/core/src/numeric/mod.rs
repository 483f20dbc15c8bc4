//! Dense tensors, reverse-mode differentiation, Adam, and checkpoints.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use params::{Bound, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
