//! Minimal dense-tensor engine: the differentiable operations the predictor
//! needs, reverse-mode gradients, Adam, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod param;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_VERSION};
pub use param::{Param, ParamId, ParamStore};
pub use tape::{Gradients, ParamGrads, Tape, Var};
pub use tensor::Tensor;
