//! Dense matrices, MLPs with reverse-mode gradients, Adam, and small eigen-solvers.

mod adam;
mod init;
pub mod linalg;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use init::orthogonal;
pub use matrix::Matrix;
pub use mlp::{Activation, HiddenRecord, LayerView, MlpSpec, NetworkParams, Tape, LAYER_NORM_EPS};
