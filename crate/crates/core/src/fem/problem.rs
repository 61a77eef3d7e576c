use super::FemError;
use crate::mesh::Mesh;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Isotropic elastic constants, in either parameterisation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ElasticConstants {
    Lame { lambda: f64, mu: f64 },
    Young { e: f64, nu: f64 },
}

impl ElasticConstants {
    /// Lamé pair `(λ, μ)`.
    pub fn lame(self) -> (f64, f64) {
        match self {
            ElasticConstants::Lame { lambda, mu } => (lambda, mu),
            ElasticConstants::Young { e, nu } => {
                (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
            }
        }
    }
}

/// The PDE classes the loss can be assembled for.
///
/// Spatially varying material data enters through the nodal control field
/// `c` passed to assembly: the conductivity `k0(x)` for both diffusion
/// problems, and a scalar multiplier on the material constants for the two
/// solid problems. Allen–Cahn takes no control field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PdeProblem {
    /// Small-strain elasticity, energy `½ ε:ℂ:ε` with `ℂ` scaled by `c(x)`.
    LinearElasticity {
        constants: ElasticConstants,
        #[serde(default = "default_true")]
        plane_strain: bool,
    },
    /// Compressible Neo-Hookean solid with `μ(X) = c(X)·mu`, `κ(X) = c(X)·kappa`.
    Hyperelastic { mu: f64, kappa: f64 },
    /// Steady nonlinear diffusion, `k = k0 (1 + 2 T⁴)`.
    StationaryDiffusion {
        #[serde(default)]
        source: f64,
    },
    /// One implicit-Euler step of `ρc_p ∂T/∂t = ∇·(K∇T) + Q`, `K = k0 (1 + αT)`.
    TransientThermal {
        alpha: f64,
        rho_cp: f64,
        dt: f64,
        #[serde(default)]
        source: f64,
    },
    /// One implicit-Euler step of Allen–Cahn with unit mobility.
    AllenCahn { eps: f64, dt: f64 },
}

fn default_true() -> bool {
    true
}

impl PdeProblem {
    /// Solution components per node.
    pub fn n_comp(&self, dim: usize) -> usize {
        match self {
            PdeProblem::LinearElasticity { .. } | PdeProblem::Hyperelastic { .. } => dim,
            _ => 1,
        }
    }

    pub fn is_transient(&self) -> bool {
        matches!(self, PdeProblem::TransientThermal { .. } | PdeProblem::AllenCahn { .. })
    }

    /// Whether the nodal control field participates in the loss.
    pub fn uses_control(&self) -> bool {
        !matches!(self, PdeProblem::AllenCahn { .. })
    }

    /// Whether a material coefficient depends on the solution itself.
    pub fn has_state_dependent_coefficient(&self) -> bool {
        matches!(
            self,
            PdeProblem::StationaryDiffusion { .. } | PdeProblem::TransientThermal { .. }
        )
    }

    pub fn validate(&self) -> Result<(), FemError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FemError::Problem(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            PdeProblem::LinearElasticity { constants, .. } => match constants {
                ElasticConstants::Young { e, nu } => {
                    positive("E", e)?;
                    if !(nu > -1.0 && nu < 0.5) {
                        return Err(FemError::Problem(format!("Poisson ratio {nu} outside (-1, 1/2)")));
                    }
                    Ok(())
                }
                ElasticConstants::Lame { lambda, mu } => {
                    positive("mu", mu)?;
                    if !(lambda.is_finite() && 3.0 * lambda + 2.0 * mu > 0.0) {
                        return Err(FemError::Problem("bulk modulus must be positive".into()));
                    }
                    Ok(())
                }
            },
            PdeProblem::Hyperelastic { mu, kappa } => {
                positive("mu", mu)?;
                positive("kappa", kappa)
            }
            PdeProblem::StationaryDiffusion { source } => {
                if source.is_finite() {
                    Ok(())
                } else {
                    Err(FemError::Problem("non-finite source".into()))
                }
            }
            PdeProblem::TransientThermal {
                alpha,
                rho_cp,
                dt,
                source,
            } => {
                if !alpha.is_finite() || !source.is_finite() {
                    return Err(FemError::Problem("non-finite thermal coefficient".into()));
                }
                positive("rho_cp", rho_cp)?;
                positive("dt", dt)
            }
            PdeProblem::AllenCahn { eps, dt } => {
                positive("eps", eps)?;
                positive("dt", dt)
            }
        }
    }
}

/// One prescribed nodal value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletEntry {
    pub node: usize,
    pub comp: usize,
    pub value: f64,
}

/// Hard Dirichlet constraints on a specific mesh.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirichletSpec {
    entries: Vec<DirichletEntry>,
}

impl DirichletSpec {
    pub fn new(entries: Vec<DirichletEntry>) -> Result<Self, FemError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert((e.node, e.comp)) {
                return Err(FemError::Dirichlet(format!(
                    "node {} component {} prescribed twice",
                    e.node, e.comp
                )));
            }
            if !e.value.is_finite() {
                return Err(FemError::Dirichlet(format!("non-finite value at node {}", e.node)));
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[DirichletEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(dof, value)` pairs under node-major dof numbering.
    pub fn dofs(&self, n_comp: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries
            .iter()
            .map(move |e| (e.node * n_comp + e.comp, e.value))
    }

    pub fn check(&self, n_nodes: usize, n_comp: usize) -> Result<(), FemError> {
        match self.entries.iter().find(|e| e.node >= n_nodes || e.comp >= n_comp) {
            Some(e) => Err(FemError::Dirichlet(format!(
                "entry (node {}, comp {}) outside {n_nodes} nodes x {n_comp} components",
                e.node, e.comp
            ))),
            None => Ok(()),
        }
    }

    /// Overwrites prescribed entries in place.
    pub fn apply_in_place(&self, u: &mut [f64], n_comp: usize) {
        for (dof, v) in self.dofs(n_comp) {
            u[dof] = v;
        }
    }

    /// Zeroes gradient entries at prescribed dofs.
    pub fn mask(&self, g: &mut [f64], n_comp: usize) {
        for (dof, _) in self.dofs(n_comp) {
            g[dof] = 0.0;
        }
    }

    pub fn dof_mask(&self, n_dof: usize, n_comp: usize) -> Vec<bool> {
        let mut m = vec![false; n_dof];
        for (dof, _) in self.dofs(n_comp) {
            m[dof] = true;
        }
        m
    }
}

/// Returns `u` with the prescribed entries overwritten.
pub fn apply_dirichlet(u: &[f64], spec: &DirichletSpec, n_comp: usize) -> Vec<f64> {
    let mut out = u.to_vec();
    spec.apply_in_place(&mut out, n_comp);
    out
}

/// Mesh-independent Dirichlet description: a value for one component on a
/// named node set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletBoundary {
    pub set: String,
    #[serde(default)]
    pub component: usize,
    pub value: f64,
}

/// Resolves boundary descriptions on `mesh`. Nodes shared by several sets
/// keep the value of the first set that names them.
pub fn resolve_dirichlet(mesh: &Mesh, bcs: &[DirichletBoundary]) -> Result<DirichletSpec, FemError> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for bc in bcs {
        let nodes = mesh.node_set(&bc.set)?;
        for &node in nodes {
            if seen.insert((node, bc.component)) {
                entries.push(DirichletEntry {
                    node,
                    comp: bc.component,
                    value: bc.value,
                });
            }
        }
    }
    DirichletSpec::new(entries)
}

/// Constant flux (or traction component) on the boundary facets of a named
/// node set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannLoad {
    pub set: String,
    #[serde(default)]
    pub component: usize,
    pub flux: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(entries: &[(usize, f64)]) -> DirichletSpec {
        DirichletSpec::new(
            entries
                .iter()
                .map(|&(node, value)| DirichletEntry { node, comp: 0, value })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn overwrite_single_entry() {
        assert_eq!(apply_dirichlet(&[1.0, 2.0, 3.0], &spec(&[(0, 9.0)]), 1), vec![9.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_spec_is_identity() {
        assert_eq!(apply_dirichlet(&[1.0, 2.0, 3.0], &DirichletSpec::empty(), 1), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn full_spec_ignores_input() {
        let s = spec(&[(0, 4.0), (1, 5.0), (2, 6.0)]);
        assert_eq!(apply_dirichlet(&[1.0, 2.0, 3.0], &s, 1), apply_dirichlet(&[-7.0, 0.0, 1e9], &s, 1));
    }

    #[test]
    fn duplicates_rejected() {
        let e = DirichletEntry { node: 1, comp: 0, value: 0.0 };
        assert!(DirichletSpec::new(vec![e, e]).is_err());
    }

    #[test]
    fn vector_dofs_are_node_major() {
        let s = DirichletSpec::new(vec![DirichletEntry { node: 2, comp: 1, value: 0.5 }]).unwrap();
        let u = apply_dirichlet(&[0.0; 6], &s, 2);
        assert_eq!(u[5], 0.5);
    }

    #[test]
    fn poisson_ratio_range() {
        let bad = PdeProblem::LinearElasticity {
            constants: ElasticConstants::Young { e: 1.0, nu: 0.5 },
            plane_strain: true,
        };
        assert!(bad.validate().is_err());
        let ok = PdeProblem::LinearElasticity {
            constants: ElasticConstants::Young { e: 1.0, nu: 0.3 },
            plane_strain: true,
        };
        ok.validate().unwrap();
    }

    #[test]
    fn young_to_lame() {
        let (l, m) = ElasticConstants::Young { e: 1.0, nu: 0.25 }.lame();
        assert!((l - 0.4).abs() < 1e-15 && (m - 0.4).abs() < 1e-15);
    }
}
