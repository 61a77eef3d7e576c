//! Element loss densities, written once over [`Real`] so the same code
//! yields values, gradients, Hessian-vector products and Hessians.

use super::problem::PdeProblem;
use crate::autodiff::Real;

/// Shape data of one element at its quadrature points.
#[derive(Clone, Debug)]
pub(crate) struct Geo {
    pub nq: usize,
    pub nn: usize,
    pub dim: usize,
    /// `n[q*nn + a]`
    pub n: Vec<f64>,
    /// `grad[(q*nn + a)*dim + d]`
    pub grad: Vec<f64>,
    /// quadrature weight × det J
    pub wdet: Vec<f64>,
}

impl Geo {
    #[inline]
    fn interp<S: Real>(&self, q: usize, v: &[S]) -> S {
        let n = &self.n[q * self.nn..(q + 1) * self.nn];
        let mut s = S::zero();
        for a in 0..self.nn {
            s += v[a] * n[a];
        }
        s
    }

    #[inline]
    fn interp_f(&self, q: usize, v: &[f64]) -> f64 {
        let n = &self.n[q * self.nn..(q + 1) * self.nn];
        (0..self.nn).map(|a| v[a] * n[a]).sum()
    }

    /// Gradient of a scalar nodal field at point `q`.
    #[inline]
    fn grad_scalar<S: Real>(&self, q: usize, v: &[S]) -> [S; 3] {
        let mut g = [S::zero(); 3];
        let base = q * self.nn * self.dim;
        for a in 0..self.nn {
            for d in 0..self.dim {
                g[d] += v[a] * self.grad[base + a * self.dim + d];
            }
        }
        g
    }

    /// Displacement gradient `H[i][j] = ∂u_i/∂x_j` for node-major dofs.
    #[inline]
    fn grad_vector<S: Real>(&self, q: usize, v: &[S]) -> [[S; 3]; 3] {
        let dim = self.dim;
        let mut h = [[S::zero(); 3]; 3];
        let base = q * self.nn * dim;
        for a in 0..self.nn {
            for i in 0..dim {
                let ua = v[a * dim + i];
                for j in 0..dim {
                    h[i][j] += ua * self.grad[base + a * dim + j];
                }
            }
        }
        h
    }
}

/// Loss of one element. `u` holds the element dofs, `c` the nodal control
/// values, `prev` the previous-step dofs of transient problems.
pub(crate) fn energy<S: Real>(p: &PdeProblem, g: &Geo, u: &[S], c: &[S], prev: Option<&[f64]>) -> S {
    let mut e = S::zero();
    let dim = g.dim;
    match *p {
        PdeProblem::StationaryDiffusion { source } => {
            for q in 0..g.nq {
                let t = g.interp(q, u);
                let k0 = g.interp(q, c);
                let gt = g.grad_scalar(q, u);
                let g2 = dot3(&gt, dim);
                let k = k0 * (t.powi(4) * 2.0 + 1.0);
                e += (k * g2 * 0.5 - t * source) * g.wdet[q];
            }
        }
        PdeProblem::TransientThermal {
            alpha,
            rho_cp,
            dt,
            source,
        } => {
            let prev = prev.expect("transient loss needs the previous step");
            for q in 0..g.nq {
                let t = g.interp(q, u);
                let tn = g.interp_f(q, prev);
                let k0 = g.interp(q, c);
                let gt = g.grad_scalar(q, u);
                let k = k0 * (t * alpha + 1.0);
                let dtt = t - tn;
                e += (k * dot3(&gt, dim) * 0.5 + dtt * dtt * (0.5 * rho_cp / dt) - t * source) * g.wdet[q];
            }
        }
        PdeProblem::AllenCahn { eps, dt } => {
            let prev = prev.expect("transient loss needs the previous step");
            for q in 0..g.nq {
                let phi = g.interp(q, u);
                let pn = g.interp_f(q, prev);
                let gp = g.grad_scalar(q, u);
                let d = phi - pn;
                let w = phi * phi - 1.0;
                e += (dot3(&gp, dim) * 0.5 + d * d * (0.5 / dt) + w * w * (0.25 / (eps * eps))) * g.wdet[q];
            }
        }
        PdeProblem::LinearElasticity {
            constants,
            plane_strain,
        } => {
            let (mut lambda, mu) = constants.lame();
            if dim == 2 && !plane_strain {
                lambda = 2.0 * lambda * mu / (lambda + 2.0 * mu);
            }
            for q in 0..g.nq {
                let h = g.grad_vector(q, u);
                let cf = g.interp(q, c);
                let mut tr = S::zero();
                let mut ee = S::zero();
                for i in 0..dim {
                    tr += h[i][i];
                    for j in 0..dim {
                        let eij = (h[i][j] + h[j][i]) * 0.5;
                        ee += eij * eij;
                    }
                }
                e += cf * (tr * tr * (0.5 * lambda) + ee * mu) * g.wdet[q];
            }
        }
        PdeProblem::Hyperelastic { mu, kappa } => {
            for q in 0..g.nq {
                let h = g.grad_vector(q, u);
                let cf = g.interp(q, c);
                let mut f = [[S::zero(); 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        f[i][j] = h[i][j];
                    }
                    f[i][i] += S::cst(1.0);
                }
                let mut trc = S::zero();
                for row in &f {
                    for x in row {
                        trc += *x * *x;
                    }
                }
                let j = det3(&f);
                let i1 = trc * j.powf(-2.0 / 3.0);
                let w = (i1 - 3.0) * (0.5 * mu) + (j * j - j.ln() * 2.0 - 1.0) * (0.25 * kappa);
                e += cf * w * g.wdet[q];
            }
        }
    }
    e
}

/// Physical residual of the diffusion problems with the conductivity law
/// kept outside the variation: `r_a = ∫ k(T) ∇N_a·∇T + …`. Returns `None`
/// for problems whose coefficients do not depend on the solution, where the
/// residual is the energy derivative.
pub(crate) fn detached_residual<S: Real>(
    p: &PdeProblem,
    g: &Geo,
    u: &[S],
    c: &[S],
    prev: Option<&[f64]>,
) -> Option<Vec<S>> {
    let dim = g.dim;
    let mut r = vec![S::zero(); g.nn];
    let accumulate = |r: &mut Vec<S>, q: usize, flux: S, mass: S| {
        let n = &g.n[q * g.nn..(q + 1) * g.nn];
        let base = q * g.nn * dim;
        let gt = g.grad_scalar(q, u);
        for a in 0..g.nn {
            let mut gd = S::zero();
            for d in 0..dim {
                gd += gt[d] * g.grad[base + a * dim + d];
            }
            r[a] += (flux * gd + mass * n[a]) * g.wdet[q];
        }
    };
    match *p {
        PdeProblem::StationaryDiffusion { source } => {
            for q in 0..g.nq {
                let t = g.interp(q, u);
                let k = g.interp(q, c) * (t.powi(4) * 2.0 + 1.0);
                accumulate(&mut r, q, k, S::cst(-source));
            }
        }
        PdeProblem::TransientThermal {
            alpha,
            rho_cp,
            dt,
            source,
        } => {
            let prev = prev.expect("transient loss needs the previous step");
            for q in 0..g.nq {
                let t = g.interp(q, u);
                let tn = g.interp_f(q, prev);
                let k = g.interp(q, c) * (t * alpha + 1.0);
                accumulate(&mut r, q, k, (t - tn) * (rho_cp / dt) - source);
            }
        }
        _ => return None,
    }
    Some(r)
}

#[inline]
fn dot3<S: Real>(v: &[S; 3], dim: usize) -> S {
    let mut s = S::zero();
    for x in &v[..dim] {
        s += *x * *x;
    }
    s
}

#[inline]
fn det3<S: Real>(f: &[[S; 3]; 3]) -> S {
    f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1]) - f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0])
        + f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0])
}
