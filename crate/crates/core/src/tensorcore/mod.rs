//! Dense tensors, a reverse-mode tape with the layer set of the enhancement
//! networks, and the Adam optimizer.

mod adam;
pub mod conv;
pub mod gradcheck;
mod scalar;
mod tape;
mod tensor;


pub use adam::{AdamConfig, AdamState};
pub use conv::{ConvGeom, Padding};
pub use scalar::Scalar;
pub use tape::{BatchStats, NormMode, RunningStats, Tape, Var, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
pub use tensor::{Param, Tensor};
