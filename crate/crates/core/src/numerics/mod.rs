//! Dense tensors, reverse-mode differentiation, Adam, and gradient checking.
//!
//! Everything is `f64`. The differentiation engine is a flat tape: a forward
//! pass records values and ops, [`Tape::backward`] replays them in reverse.

mod adam;
mod attention;
mod checkpoint;
mod gradcheck;
pub mod kernels;
mod layers;
mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{scaled_dot_product_attention, AttentionOutput, AttentionProjections, MultiHeadAttention};
pub use checkpoint::Checkpoint;
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, COORDS_PER_PARAM};
pub use kernels::ConvGeometry;
pub use layers::{dropout, Conv2d, Linear};
pub use ops::{binary_cross_entropy, hardtanh, kl_to_standard_normal, mean_binary_cross_entropy};
pub use tape::{Gradients, Tape, Var, BCE_EPS};
pub use tensor::{GradMap, ParamStore, Tensor};
