//! Dense reverse-mode automatic differentiation for the neural tier.
//!
//! A [`Tape`] records one forward pass as a list of nodes over [`Matrix`]
//! values; [`Tape::backward`] replays it in reverse. Trainable arrays live in a
//! [`ParamStore`] and enter a tape through [`Tape::param`].

mod matrix;
mod mlp;
mod optim;
mod params;
mod tape;

pub use matrix::Matrix;
pub use mlp::{Activation, Layer, Mlp};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamId, ParamStore};
pub use tape::{Axis, Gradients, Tape, Var};
