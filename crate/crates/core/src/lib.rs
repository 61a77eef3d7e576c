//! Implicit finite operator learning.
//!
//! A shift-modulated sine network maps coordinates and a per-sample latent
//! code to a solution field. Codes are found by a few gradient steps on a
//! finite-element loss; the shared weights are meta-trained through those
//! steps. A Newton solver and adjoint sensitivities act as the reference.

pub mod autodiff;
pub mod fem;
pub mod field_net;
pub mod learning;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod rng;
pub mod sampling;
