//! Forward-mode scalars, a reverse-mode tape, and unrolled meta-gradients.

mod dual;
mod jet;
mod meta;
mod real;
mod tape;
mod trig;

pub use dual::Dual;
pub use jet::Grad;
pub use meta::{descend, unrolled_grad, InnerRun, LatentObjective, Recorded, Unrolled};
pub use real::Real;
pub use tape::{grad, hvp, Adjoints, Functional, Tape, Var};
pub use trig::sin_cos;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { node: usize, op: &'static str },
    #[error("functional at node {node} failed: {message}")]
    Functional { node: usize, message: String },
    #[error("latent descent diverged at step {step} (loss {value})")]
    Diverged { step: usize, value: f64 },
}
