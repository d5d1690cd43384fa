//! Grids, quaternions, convolution, tensors and the gradient machinery
//! shared by every trainable component.

mod conv;
mod gradcheck;
mod grid;
mod optim;
mod params;
mod quaternion;
mod tape;
mod tensor;

pub use conv::{conv2d_same, conv2d_same_with, Border, Kernel2d};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, StoreGrads};
pub use grid::{reflect_index, ImageGrid};
pub use optim::AdamW;
pub use params::{fnv64, Fnv64, ParamEntry, ParamId, ParamStore};
pub use quaternion::{quat_magnitude, quat_phase, QuatPhase, Quaternion};
pub use tape::{ConvSpec, Gradients, ParamKey, Tape, Var};
pub use tensor::{Shape, Tensor};
