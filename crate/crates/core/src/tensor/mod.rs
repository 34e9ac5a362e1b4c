//! Dense reverse-mode autodiff, tanh multilayer perceptrons and Adam.

mod mlp;
mod params;
mod tape;

pub use mlp::{Mlp, MlpSpec};
pub use params::{adam_step, AdamConfig, AdamReport, ParamId, ParamStore};
pub use tape::{Gradients, Matrix, Tape, Var};
