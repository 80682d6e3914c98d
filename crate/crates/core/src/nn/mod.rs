//! Small dense networks with hand-written backward passes.
//!
//! Only the layer types used by the actor and critics exist: linear, layer
//! normalization and a pointwise activation. Parameters live in one flat vector per
//! network, which keeps the optimizer, target averaging and checkpointing trivial.

mod adam;
mod checkpoint;
mod mlp;
mod norm;
mod policy;

pub use adam::{polyak, Adam};
pub use checkpoint::{Checkpoint, Tensor};
pub use mlp::{Activation, Mlp, Tape, TensorInfo};
pub use norm::RunningNorm;
pub use policy::{squashed_log_prob, GaussianHead, SquashedSample, LOG_STD_RANGE};
