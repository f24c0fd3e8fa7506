//! Dense ELU networks, their reverse-mode gradients, and Adam.

mod adam;
mod gemm;
mod mlp;

pub use adam::{AdamConfig, AdamState, ParamGroup};
pub use mlp::{Mlp, MlpCheckpoint, Tape};
