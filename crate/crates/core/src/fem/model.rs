use super::element::{build_geo, check_control, local_grad, local_hess, local_hvp, local_value, Local, LocalGrad};
use super::energy::Geo;
use super::{DirichletSpec, FemError, FemOptions, NeumannLoad, PdeProblem};
use crate::linalg::CsrMatrix;
use crate::mesh::Mesh;
use rayon::prelude::*;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

/// What [`FemModel::assemble`] should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Want {
    Loss,
    Gradient,
    Tangent,
}

/// Assembled global quantities. `grad` is empty for [`Want::Loss`].
#[derive(Clone, Debug)]
pub struct GlobalWork {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub residual: Option<Vec<f64>>,
    pub tangent: Option<CsrMatrix>,
}

/// Second-order quantities along a direction `(u̇, ċ)`.
#[derive(Clone, Debug)]
pub struct Directional {
    pub loss: f64,
    pub grad_u: Vec<f64>,
    pub grad_c: Vec<f64>,
    /// `∂²L/∂u² u̇ + ∂²L/∂u∂c ċ`
    pub hess_u: Vec<f64>,
    /// `∂²L/∂c∂u u̇ + ∂²L/∂c² ċ`
    pub hess_c: Vec<f64>,
}

const PAR_CHUNK: usize = 64;

/// A PDE loss bound to a mesh: element geometry is computed once and every
/// evaluation is an ordered parallel map over elements followed by a
/// sequential scatter, so results do not depend on the thread count.
#[derive(Clone, Debug)]
pub struct FemModel {
    mesh: Arc<Mesh>,
    problem: PdeProblem,
    options: FemOptions,
    n_comp: usize,
    geos: Vec<Geo>,
    elem_dofs: Vec<Vec<usize>>,
    neumann: Vec<f64>,
    node_weights: Vec<f64>,
    pattern: CsrMatrix,
    scatter: Vec<Vec<usize>>,
}

impl FemModel {
    pub fn new(
        mesh: Arc<Mesh>,
        problem: PdeProblem,
        neumann: &[NeumannLoad],
        options: FemOptions,
    ) -> Result<Self, FemError> {
        problem.validate()?;
        let n_comp = problem.n_comp(mesh.dim);
        let geos = (0..mesh.n_elements())
            .map(|e| build_geo(mesh.elem_type, &mesh.element_coords(e)).map_err(|err| err.at_element(e)))
            .collect::<Result<Vec<_>, _>>()?;
        let elem_dofs: Vec<Vec<usize>> = mesh
            .elements
            .iter()
            .map(|conn| {
                conn.iter()
                    .flat_map(|&n| (0..n_comp).map(move |k| n * n_comp + k))
                    .collect()
            })
            .collect();
        let n_dof = mesh.n_nodes() * n_comp;
        let mut rows = vec![Vec::new(); n_dof];
        for dofs in &elem_dofs {
            for &i in dofs {
                rows[i].extend_from_slice(dofs);
            }
        }
        let pattern = CsrMatrix::from_pattern(rows);
        let scatter = elem_dofs
            .iter()
            .map(|dofs| {
                dofs.iter()
                    .flat_map(|&i| dofs.iter().map(move |&j| (i, j)))
                    .map(|(i, j)| pattern.position(i, j).expect("element pair in pattern"))
                    .collect()
            })
            .collect();
        let mut node_weights = vec![0.0; mesh.n_nodes()];
        for (geo, conn) in geos.iter().zip(&mesh.elements) {
            for q in 0..geo.nq {
                for (a, &node) in conn.iter().enumerate() {
                    node_weights[node] += geo.wdet[q] * geo.n[q * geo.nn + a];
                }
            }
        }
        let neumann = neumann_vector(&mesh, n_comp, neumann)?;
        Ok(Self {
            mesh,
            problem,
            options,
            n_comp,
            geos,
            elem_dofs,
            neumann,
            node_weights,
            pattern,
            scatter,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn problem(&self) -> &PdeProblem {
        &self.problem
    }

    pub fn options(&self) -> &FemOptions {
        &self.options
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn n_dof(&self) -> usize {
        self.mesh.n_nodes() * self.n_comp
    }

    /// `∫ N_i dΩ` for every node; `Σ_i w_i T_i` integrates a nodal field
    /// with the element quadrature.
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    pub fn check_inputs(&self, u: &[f64], c: &[f64], prev: Option<&[f64]>) -> Result<(), FemError> {
        let n_dof = self.n_dof();
        if u.len() != n_dof {
            return Err(FemError::Dimension(format!("solution has {} entries, expected {n_dof}", u.len())));
        }
        if self.problem.uses_control() {
            if c.len() != self.mesh.n_nodes() {
                return Err(FemError::Dimension(format!(
                    "control field has {} entries, expected {}",
                    c.len(),
                    self.mesh.n_nodes()
                )));
            }
            check_control(c, None)?;
        }
        match (self.problem.is_transient(), prev) {
            (true, None) => Err(FemError::MissingPrevious),
            (true, Some(p)) if p.len() != n_dof => Err(FemError::Dimension(format!(
                "previous step has {} entries, expected {n_dof}",
                p.len()
            ))),
            (false, Some(_)) => Err(FemError::Dimension("previous step given for a stationary problem".into())),
            _ => Ok(()),
        }
    }

    fn map_elements<T: Send>(
        &self,
        u: &[f64],
        c: &[f64],
        prev: Option<&[f64]>,
        f: impl Fn(&Local) -> T + Sync,
    ) -> Vec<T> {
        let nn = self.mesh.elem_type.n_nodes();
        let uses_c = self.problem.uses_control();
        (0..self.geos.len())
            .into_par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|e| {
                let dofs = &self.elem_dofs[e];
                let ue: Vec<f64> = dofs.iter().map(|&i| u[i]).collect();
                let ce: Vec<f64> = if uses_c {
                    self.mesh.elements[e].iter().map(|&n| c[n]).collect()
                } else {
                    vec![0.0; nn]
                };
                let pe: Option<Vec<f64>> = prev.map(|p| dofs.iter().map(|&i| p[i]).collect());
                let local = Local {
                    problem: &self.problem,
                    geo: &self.geos[e],
                    u: &ue,
                    c: &ce,
                    prev: pe.as_deref(),
                    detach: self.options.detach_residual,
                };
                f(&local)
            })
            .collect()
    }

    fn finite(e: usize, g: &LocalGrad) -> Result<(), FemError> {
        if g.loss.is_finite() && g.gu.iter().chain(&g.gc).all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(FemError::NonFinite { element: Some(e) })
        }
    }

    pub fn loss(&self, u: &[f64], c: &[f64], prev: Option<&[f64]>) -> Result<f64, FemError> {
        self.check_inputs(u, c, prev)?;
        let vals = self.map_elements(u, c, prev, local_value);
        let mut total = 0.0;
        for (e, v) in vals.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(FemError::NonFinite { element: Some(e) });
            }
            total += v;
        }
        Ok(total - crate::linalg::dot(&self.neumann, u))
    }

    /// Loss, gradient in `u`, and (when `wrt_c`) gradient in the nodal control.
    pub fn gradient(
        &self,
        u: &[f64],
        c: &[f64],
        prev: Option<&[f64]>,
        wrt_c: bool,
    ) -> Result<(f64, Vec<f64>, Vec<f64>), FemError> {
        self.check_inputs(u, c, prev)?;
        let wrt_c = wrt_c && self.problem.uses_control();
        let parts = self.map_elements(u, c, prev, |l| local_grad(l, wrt_c));
        let mut loss = -crate::linalg::dot(&self.neumann, u);
        let mut gu: Vec<f64> = self.neumann.iter().map(|x| -x).collect();
        let mut gc = if wrt_c { vec![0.0; self.mesh.n_nodes()] } else { Vec::new() };
        for (e, g) in parts.iter().enumerate() {
            Self::finite(e, g)?;
            loss += g.loss;
            for (&i, v) in self.elem_dofs[e].iter().zip(&g.gu) {
                gu[i] += v;
            }
            for (&n, v) in self.mesh.elements[e].iter().zip(&g.gc) {
                gc[n] += v;
            }
        }
        Ok((loss, gu, gc))
    }

    /// Gradient together with Hessian-vector products along `(udot, cdot)`.
    pub fn directional(
        &self,
        u: &[f64],
        c: &[f64],
        prev: Option<&[f64]>,
        udot: Option<&[f64]>,
        cdot: Option<&[f64]>,
        wrt_c: bool,
    ) -> Result<Directional, FemError> {
        self.check_inputs(u, c, prev)?;
        let uses_c = self.problem.uses_control();
        let wrt_c = wrt_c && uses_c;
        let cdot = if uses_c { cdot } else { None };
        let nn = self.mesh.elem_type.n_nodes();
        let zero_c = vec![0.0; nn];
        let results: Vec<(LocalGrad, Vec<f64>, Vec<f64>)> = (0..self.geos.len())
            .into_par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|e| {
                let dofs = &self.elem_dofs[e];
                let conn = &self.mesh.elements[e];
                let ue: Vec<f64> = dofs.iter().map(|&i| u[i]).collect();
                let ce: Vec<f64> = if uses_c { conn.iter().map(|&n| c[n]).collect() } else { zero_c.clone() };
                let pe: Option<Vec<f64>> = prev.map(|p| dofs.iter().map(|&i| p[i]).collect());
                let ud: Option<Vec<f64>> = udot.map(|d| dofs.iter().map(|&i| d[i]).collect());
                let cd: Option<Vec<f64>> = cdot.map(|d| conn.iter().map(|&n| d[n]).collect());
                let local = Local {
                    problem: &self.problem,
                    geo: &self.geos[e],
                    u: &ue,
                    c: &ce,
                    prev: pe.as_deref(),
                    detach: self.options.detach_residual,
                };
                local_hvp(&local, ud.as_deref(), cd.as_deref(), wrt_c)
            })
            .collect();
        let n_nodes = self.mesh.n_nodes();
        let mut out = Directional {
            loss: -crate::linalg::dot(&self.neumann, u),
            grad_u: self.neumann.iter().map(|x| -x).collect(),
            grad_c: if wrt_c { vec![0.0; n_nodes] } else { Vec::new() },
            hess_u: vec![0.0; self.n_dof()],
            hess_c: if wrt_c { vec![0.0; n_nodes] } else { Vec::new() },
        };
        for (e, (g, hu, hc)) in results.iter().enumerate() {
            Self::finite(e, g)?;
            out.loss += g.loss;
            for (k, &i) in self.elem_dofs[e].iter().enumerate() {
                out.grad_u[i] += g.gu[k];
                out.hess_u[i] += hu[k];
            }
            if wrt_c {
                for (k, &n) in self.mesh.elements[e].iter().enumerate() {
                    out.grad_c[n] += g.gc[k];
                    out.hess_c[n] += hc[k];
                }
            }
        }
        Ok(out)
    }

    /// Loss, gradient and sparse tangent `∂²L/∂u²` (no Dirichlet treatment).
    pub fn tangent(&self, u: &[f64], c: &[f64], prev: Option<&[f64]>) -> Result<(f64, Vec<f64>, CsrMatrix), FemError> {
        self.check_inputs(u, c, prev)?;
        let parts = self.map_elements(u, c, prev, |l| local_hess(l, false));
        let mut loss = -crate::linalg::dot(&self.neumann, u);
        let mut grad: Vec<f64> = self.neumann.iter().map(|x| -x).collect();
        let mut k = self.pattern.clone();
        for (e, (g, h)) in parts.iter().enumerate() {
            Self::finite(e, g)?;
            if h.iter().any(|x| !x.is_finite()) {
                return Err(FemError::NonFinite { element: Some(e) });
            }
            loss += g.loss;
            for (&i, v) in self.elem_dofs[e].iter().zip(&g.gu) {
                grad[i] += v;
            }
            for (&p, v) in self.scatter[e].iter().zip(h) {
                k.values[p] += v;
            }
        }
        Ok((loss, grad, k))
    }

    /// Mixed block `∂²L/∂c∂u` as a dense `n_nodes × n_dof` row-major matrix.
    pub fn mixed_control_block(&self, u: &[f64], c: &[f64], prev: Option<&[f64]>) -> Result<Vec<f64>, FemError> {
        self.check_inputs(u, c, prev)?;
        let n_dof = self.n_dof();
        let n_nodes = self.mesh.n_nodes();
        let mut out = vec![0.0; n_nodes * n_dof];
        if !self.problem.uses_control() {
            return Ok(out);
        }
        let parts = self.map_elements(u, c, prev, |l| local_hess(l, true));
        for (e, (_, h)) in parts.iter().enumerate() {
            let dofs = &self.elem_dofs[e];
            let conn = &self.mesh.elements[e];
            let nu = dofs.len();
            let m = nu + conn.len();
            for (kc, &n) in conn.iter().enumerate() {
                for (ku, &i) in dofs.iter().enumerate() {
                    out[n * n_dof + i] += h[(nu + kc) * m + ku];
                }
            }
        }
        Ok(out)
    }

    /// Global work with Dirichlet treatment: gradient entries at prescribed
    /// dofs are zeroed; the tangent has those rows and columns replaced by
    /// identity rows/columns.
    pub fn assemble(
        &self,
        u: &[f64],
        c: &[f64],
        prev: Option<&[f64]>,
        dirichlet: &DirichletSpec,
        want: Want,
    ) -> Result<GlobalWork, FemError> {
        dirichlet.check(self.mesh.n_nodes(), self.n_comp)?;
        match want {
            Want::Loss => Ok(GlobalWork {
                loss: self.loss(u, c, prev)?,
                grad: Vec::new(),
                residual: None,
                tangent: None,
            }),
            Want::Gradient => {
                let (loss, mut grad, _) = self.gradient(u, c, prev, false)?;
                dirichlet.mask(&mut grad, self.n_comp);
                Ok(GlobalWork {
                    loss,
                    grad,
                    residual: None,
                    tangent: None,
                })
            }
            Want::Tangent => {
                let (loss, mut grad, mut k) = self.tangent(u, c, prev)?;
                dirichlet.mask(&mut grad, self.n_comp);
                let fixed = dirichlet.dof_mask(self.n_dof(), self.n_comp);
                condense(&mut k, &fixed);
                Ok(GlobalWork {
                    loss,
                    residual: Some(grad.clone()),
                    grad,
                    tangent: Some(k),
                })
            }
        }
    }
}

/// Zeroes rows and columns of fixed dofs and puts 1 on their diagonal.
fn condense(k: &mut CsrMatrix, fixed: &[bool]) {
    for i in 0..k.n {
        for p in k.row_ptr[i]..k.row_ptr[i + 1] {
            let j = k.col_idx[p];
            if fixed[i] || fixed[j] {
                k.values[p] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
}

fn neumann_vector(mesh: &Mesh, n_comp: usize, loads: &[NeumannLoad]) -> Result<Vec<f64>, FemError> {
    let mut f = vec![0.0; mesh.n_nodes() * n_comp];
    if loads.is_empty() {
        return Ok(f);
    }
    let facets = mesh.elem_type.facets();
    let mut count: HashMap<Vec<usize>, usize> = HashMap::new();
    for conn in &mesh.elements {
        for fl in facets {
            let mut key: Vec<usize> = fl.iter().map(|&a| conn[a]).collect();
            key.sort_unstable();
            *count.entry(key).or_default() += 1;
        }
    }
    for load in loads {
        if load.component >= n_comp {
            return Err(FemError::Problem(format!("load component {} out of range", load.component)));
        }
        let set: HashSet<usize> = mesh.node_set(&load.set)?.iter().copied().collect();
        for conn in &mesh.elements {
            for fl in facets {
                let nodes: Vec<usize> = fl.iter().map(|&a| conn[a]).collect();
                if !nodes.iter().all(|n| set.contains(n)) {
                    continue;
                }
                let mut key = nodes.clone();
                key.sort_unstable();
                if count[&key] != 1 {
                    continue;
                }
                let share = load.flux * facet_measure(mesh, &nodes) / nodes.len() as f64;
                for &n in &nodes {
                    f[n * n_comp + load.component] += share;
                }
            }
        }
    }
    Ok(f)
}

fn facet_measure(mesh: &Mesh, nodes: &[usize]) -> f64 {
    let p = |i: usize| &mesh.coords[nodes[i]];
    let sub = |a: &[f64], b: &[f64]| -> [f64; 3] {
        let mut d = [0.0; 3];
        for k in 0..a.len().min(3) {
            d[k] = a[k] - b[k];
        }
        d
    };
    match nodes.len() {
        2 => {
            let d = sub(p(1), p(0));
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        }
        3 => {
            let (a, b) = (sub(p(1), p(0)), sub(p(2), p(0)));
            let cx = a[1] * b[2] - a[2] * b[1];
            let cy = a[2] * b[0] - a[0] * b[2];
            let cz = a[0] * b[1] - a[1] * b[0];
            0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
        }
        _ => 0.0,
    }
}
