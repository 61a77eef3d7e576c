//! Reference Newton solver, adjoint sensitivities and error metrics.

use crate::autodiff::unrolled_grad;
use crate::fem::{DirichletSpec, FemError, FemModel, Want};
use crate::field_net::FieldNetParams;
use crate::learning::{IntegralObjective, LearnError, PdeObjective, Sample, Task, TrainConfig, Wrt};
use crate::linalg::{conjugate_gradient, norm2, sparse_direct_solve, CsrMatrix, DenseMatrix, LinalgError, LuFactor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("linear solve failed: {0}")]
    Linear(#[from] LinalgError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    #[serde(default = "default_tol")]
    pub tol_residual: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_true")]
    pub line_search: bool,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_iters() -> usize {
    25
}
fn default_true() -> bool {
    true
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol_residual: default_tol(),
            max_iters: default_iters(),
            line_search: true,
        }
    }
}

const MAX_HALVINGS: usize = 8;

#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub u: Vec<f64>,
    /// Number of linear solves performed.
    pub iterations: usize,
    /// Free-dof residual norm before each iteration and at the end.
    pub residuals: Vec<f64>,
}

/// Damped Newton on the assembled residual with Dirichlet condensation.
/// `u0` is overwritten at prescribed dofs first.
pub fn newton_solve(
    model: &FemModel,
    c: &[f64],
    prev: Option<&[f64]>,
    dirichlet: &DirichletSpec,
    u0: &[f64],
    cfg: &NewtonConfig,
) -> Result<NewtonReport, OracleError> {
    let nc = model.n_comp();
    let mut u = u0.to_vec();
    dirichlet.apply_in_place(&mut u, nc);
    let mut residuals = Vec::new();
    let mut work = model.assemble(&u, c, prev, dirichlet, Want::Tangent)?;
    let mut rnorm = norm2(&work.grad);
    residuals.push(rnorm);
    for it in 0..cfg.max_iters {
        if rnorm < cfg.tol_residual {
            return Ok(NewtonReport {
                u,
                iterations: it,
                residuals,
            });
        }
        let k = work.tangent.as_ref().expect("tangent requested");
        let rhs: Vec<f64> = work.grad.iter().map(|r| -r).collect();
        let du = sparse_direct_solve(k, &rhs)?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a + step * d).collect();
            match model.assemble(&trial, c, prev, dirichlet, Want::Tangent) {
                Ok(w) => {
                    let n = norm2(&w.grad);
                    if !cfg.line_search || n < rnorm {
                        accepted = Some((trial, w, n));
                        break;
                    }
                }
                Err(FemError::NonFinite { .. }) if cfg.line_search => {}
                Err(e) => return Err(e.into()),
            }
            step *= 0.5;
        }
        let Some((nu, nw, n)) = accepted else {
            return Err(OracleError::NoConvergence {
                iterations: it + 1,
                residual: rnorm,
            });
        };
        u = nu;
        work = nw;
        rnorm = n;
        residuals.push(rnorm);
    }
    if rnorm < cfg.tol_residual {
        return Ok(NewtonReport {
            u,
            iterations: cfg.max_iters,
            residuals,
        });
    }
    Err(OracleError::NoConvergence {
        iterations: cfg.max_iters,
        residual: rnorm,
    })
}

/// Implicit-Euler sequence from `u0` (Dirichlet re-applied each step).
pub fn fem_rollout(
    model: &FemModel,
    c: &[f64],
    dirichlet: &DirichletSpec,
    u0: &[f64],
    steps: usize,
    cfg: &NewtonConfig,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let mut out = Vec::with_capacity(steps);
    let mut prev = u0.to_vec();
    for _ in 0..steps {
        let u = newton_solve(model, c, Some(&prev), dirichlet, &prev, cfg)?.u;
        prev = u.clone();
        out.push(u);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    #[default]
    DenseLu,
    ConjugateGradient,
}

/// Dense LU with partial pivoting.
pub fn linear_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if a.rows != a.cols || a.rows != b.len() {
        return Err(LinalgError::Dimension(format!("{}x{} system with rhs {}", a.rows, a.cols, b.len())));
    }
    Ok(LuFactor::new(a)?.solve(b))
}

/// Solves a sparse system with the chosen method.
pub fn sparse_solve(a: &CsrMatrix, b: &[f64], method: LinearSolver) -> Result<Vec<f64>, LinalgError> {
    match method {
        LinearSolver::DenseLu => sparse_direct_solve(a, b),
        LinearSolver::ConjugateGradient => conjugate_gradient(a, b, 1e-12, 10 * a.n + 100),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    /// `𝒥 = ∫ u₁ dΩ`.
    pub objective: f64,
    /// `d𝒥/dc` per node.
    pub map: Vec<f64>,
    pub adjoint_solves: usize,
}

/// `𝒥` of a nodal field by consistent quadrature (first component).
pub fn integral(model: &FemModel, u: &[f64]) -> f64 {
    let nc = model.n_comp();
    model.node_weights().iter().enumerate().map(|(n, w)| w * u[n * nc]).sum()
}

/// Adjoint sensitivity of `𝒥` with respect to the nodal control at a
/// converged solution: `(∂r/∂u)ᵀ λ = ∂𝒥/∂u`, map `= −λᵀ ∂r/∂c`.
pub fn adjoint_sensitivity(
    model: &FemModel,
    c: &[f64],
    prev: Option<&[f64]>,
    dirichlet: &DirichletSpec,
    u: &[f64],
) -> Result<SensitivityResult, OracleError> {
    let nc = model.n_comp();
    let work = model.assemble(u, c, prev, dirichlet, Want::Tangent)?;
    let k = work.tangent.expect("tangent requested");
    let mut dj = vec![0.0; model.n_dof()];
    for (n, w) in model.node_weights().iter().enumerate() {
        dj[n * nc] = *w;
    }
    dirichlet.mask(&mut dj, nc);
    let kt = if k.is_symmetric(0.0) { k } else { k.transpose() };
    let lambda = sparse_direct_solve(&kt, &dj)?;
    let d = model.directional(u, c, prev, Some(&lambda), None, true)?;
    let map = if d.hess_c.is_empty() {
        vec![0.0; model.mesh().n_nodes()]
    } else {
        d.hess_c.iter().map(|x| -x).collect()
    };
    Ok(SensitivityResult {
        objective: integral(model, u),
        map,
        adjoint_solves: 1,
    })
}

/// Sensitivity of `𝒥(infer(c))` with respect to `c`, differentiating
/// through the encoding steps and the decoder. No nonlinear solves.
pub fn ifol_sensitivity(
    sample: &Sample,
    params: &FieldNetParams,
    task: &Task,
    cfg: &TrainConfig,
) -> Result<SensitivityResult, OracleError> {
    task.check_sample(sample)?;
    let inner = PdeObjective::new(task, params, sample, Wrt::Control);
    let outer = IntegralObjective::new(task, params, sample);
    let l0 = vec![0.0; task.net.latent_dim];
    let u = unrolled_grad(&inner, &outer, &l0, cfg.k_encode, cfg.alpha, false).map_err(LearnError::from)?;
    Ok(SensitivityResult {
        objective: u.outer_value,
        map: u.grads.into_iter().next().unwrap_or_default(),
        adjoint_solves: 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rel_l2: f64,
    pub max_pointwise: f64,
}

pub fn error_metrics(pred: &[f64], reference: &[f64]) -> ErrorMetrics {
    assert_eq!(pred.len(), reference.len(), "fields differ in length");
    let diff: Vec<f64> = pred.iter().zip(reference).map(|(a, b)| a - b).collect();
    let dn = norm2(&diff);
    let rn = norm2(reference);
    let rel_l2 = if rn == 0.0 {
        if dn == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        dn / rn
    };
    ErrorMetrics {
        rel_l2,
        max_pointwise: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
    }
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "series differ in length");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
