//! Finite-element losses, assembly and Dirichlet handling.

mod element;
mod energy;
mod model;
mod problem;

pub use element::{element_work, ElementWork};
pub use model::{Directional, FemModel, GlobalWork, Want};
pub use problem::{
    apply_dirichlet, resolve_dirichlet, DirichletBoundary, DirichletEntry, DirichletSpec, ElasticConstants,
    NeumannLoad, PdeProblem,
};

use crate::mesh::MeshError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error("invalid Dirichlet data: {0}")]
    Dirichlet(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("transient problem evaluated without a previous step")]
    MissingPrevious,
    #[error("material value {value} at node {node} is not finite and positive")]
    Material { node: usize, value: f64 },
    #[error("non-finite loss or derivative{}", .element.map(|e| format!(" in element {e}")).unwrap_or_default())]
    NonFinite { element: Option<usize> },
}

/// Assembly switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FemOptions {
    /// Use the physical residual (state-dependent conductivity held fixed
    /// under variation) as the loss gradient, with `uᵀr` as the loss value.
    /// Only changes the two diffusion problems.
    #[serde(default)]
    pub detach_residual: bool,
}
