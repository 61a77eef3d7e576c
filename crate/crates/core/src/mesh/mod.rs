//! Meshes, linear isoparametric elements and quadrature.

mod element;
mod grid;
mod locate;

pub use element::{
    geometry_map, quadrature, shape_eval, ElementType, GeomEval, QuadratureRule, ShapeEval,
};
pub use grid::generate_grid;
pub use locate::{interpolate, locate, parent_coords};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("point {xi:?} lies outside the parent domain of {elem_type:?}")]
    OutsideParent { elem_type: ElementType, xi: Vec<f64> },
    #[error("inverted element{}: det J = {det_jac:e}", .element.map(|e| format!(" {e}")).unwrap_or_default())]
    InvertedElement { element: Option<usize>, det_jac: f64 },
    #[error("invalid grid arguments: {0}")]
    Argument(String),
    #[error("malformed mesh: {0}")]
    Malformed(String),
    #[error("mesh JSON: {0}")]
    Json(String),
}

impl MeshError {
    pub(crate) fn at_element(self, e: usize) -> Self {
        match self {
            MeshError::InvertedElement { det_jac, .. } => MeshError::InvertedElement {
                element: Some(e),
                det_jac,
            },
            other => other,
        }
    }
}

/// Spatial discretisation: nodes, connectivity and named boundary sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dim: usize,
    pub elem_type: ElementType,
    pub coords: Vec<Vec<f64>>,
    pub elements: Vec<Vec<usize>>,
    #[serde(default)]
    pub node_sets: BTreeMap<String, Vec<usize>>,
}

impl Mesh {
    /// Checks connectivity, node sets and element orientation at every
    /// quadrature point.
    pub fn new(
        dim: usize,
        elem_type: ElementType,
        coords: Vec<Vec<f64>>,
        elements: Vec<Vec<usize>>,
        node_sets: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self, MeshError> {
        let mesh = Self {
            dim,
            elem_type,
            coords,
            elements,
            node_sets,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.dim != self.elem_type.dim() {
            return Err(MeshError::Malformed(format!(
                "dimension {} does not match {:?}",
                self.dim, self.elem_type
            )));
        }
        let m = self.coords.len();
        if let Some(i) = self.coords.iter().position(|c| c.len() != self.dim) {
            return Err(MeshError::Malformed(format!(
                "node {i} has {} coordinates, expected {}",
                self.coords[i].len(),
                self.dim
            )));
        }
        if self.coords.iter().flatten().any(|x| !x.is_finite()) {
            return Err(MeshError::Malformed("non-finite coordinate".into()));
        }
        let nn = self.elem_type.n_nodes();
        for (e, conn) in self.elements.iter().enumerate() {
            if conn.len() != nn {
                return Err(MeshError::Malformed(format!(
                    "element {e} has {} nodes, expected {nn}",
                    conn.len()
                )));
            }
            if let Some(&bad) = conn.iter().find(|&&i| i >= m) {
                return Err(MeshError::Malformed(format!(
                    "element {e} references node {bad} but the mesh has {m} nodes"
                )));
            }
        }
        for (name, set) in &self.node_sets {
            let mut seen = HashSet::with_capacity(set.len());
            for &i in set {
                if i >= m {
                    return Err(MeshError::Malformed(format!(
                        "node set {name:?} references node {i} out of range"
                    )));
                }
                if !seen.insert(i) {
                    return Err(MeshError::Malformed(format!(
                        "node set {name:?} lists node {i} twice"
                    )));
                }
            }
        }
        // Quad4 det J is linear in (ξ, η), so the corners bound it exactly.
        let points: Vec<Vec<f64>> = match self.elem_type {
            ElementType::Quad4 => self.elem_type.parent_nodes().iter().map(|p| p[..2].to_vec()).collect(),
            _ => quadrature(self.elem_type).points,
        };
        let shapes: Vec<ShapeEval> = points
            .iter()
            .map(|p| shape_eval(self.elem_type, p))
            .collect::<Result<_, _>>()?;
        for e in 0..self.elements.len() {
            let xe = self.element_coords(e);
            for se in &shapes {
                geometry_map(self.elem_type, &xe, se).map_err(|err| err.at_element(e))?;
            }
        }
        Ok(())
    }

    pub fn element_coords(&self, e: usize) -> Vec<&[f64]> {
        self.elements[e]
            .iter()
            .map(|&i| self.coords[i].as_slice())
            .collect()
    }

    pub fn node_set(&self, name: &str) -> Result<&[usize], MeshError> {
        self.node_sets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| MeshError::Malformed(format!("unknown node set {name:?}")))
    }

    /// Axis-aligned bounding box, one `(min, max)` pair per axis.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|a| {
                self.coords.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    (lo.min(c[a]), hi.max(c[a]))
                })
            })
            .collect()
    }

    /// Σ_e Σ_k w_k det J: the discrete domain measure.
    pub fn volume(&self) -> Result<f64, MeshError> {
        let rule = quadrature(self.elem_type);
        let mut vol = 0.0;
        for e in 0..self.elements.len() {
            let xe = self.element_coords(e);
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let se = shape_eval(self.elem_type, p)?;
                vol += w * geometry_map(self.elem_type, &xe, &se)
                    .map_err(|err| err.at_element(e))?
                    .det_jac;
            }
        }
        Ok(vol)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mesh serialisation cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, MeshError> {
        let m: Mesh = serde_json::from_str(s).map_err(|e| MeshError::Json(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Hex digest of the canonical JSON form; ties datasets to meshes.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
