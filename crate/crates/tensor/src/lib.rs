//! Minimal dense tensors with define-by-run reverse-mode autodiff, an Adam
//! optimizer and a binary checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod param;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use param::{ParamId, ParamStore};
pub use scalar::{Precision, Scalar};
pub use tape::{Gradients, ReduceKind, Tape, Var};
pub use tensor::{argmax, Tensor};
