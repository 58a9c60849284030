//! Neural building blocks shared by the CWI and MSB models.

mod attention;
mod linear;
mod lstm;
mod regularizers;

pub use attention::{AttentionOutput, ModalityAttention};
pub use linear::{Embedding, Linear};
pub use lstm::{BiLstm, Lstm};
pub use regularizers::{sine_relu, sine_relu_scalar, DropTarget, GroupNorm, TargetedDropout, GROUP_NORM_EPS};
