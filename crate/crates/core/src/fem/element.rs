use super::energy::{detached_residual, energy, Geo};
use super::{FemError, FemOptions, PdeProblem};
use crate::autodiff::{Dual, Grad};
use crate::mesh::{geometry_map, quadrature, shape_eval, ElementType, MeshError};

/// Loss of one element with its derivatives in the element dofs.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementWork {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Row-major `n×n`, `n` = element dof count.
    pub hess: Option<Vec<f64>>,
}

pub(crate) fn build_geo(et: ElementType, coords_e: &[&[f64]]) -> Result<Geo, MeshError> {
    let rule = quadrature(et);
    let (nn, dim) = (et.n_nodes(), et.dim());
    let nq = rule.weights.len();
    let mut geo = Geo {
        nq,
        nn,
        dim,
        n: Vec::with_capacity(nq * nn),
        grad: Vec::with_capacity(nq * nn * dim),
        wdet: Vec::with_capacity(nq),
    };
    for (xi, w) in rule.points.iter().zip(&rule.weights) {
        let se = shape_eval(et, xi)?;
        let ge = geometry_map(et, coords_e, &se)?;
        geo.n.extend_from_slice(&se.n);
        for gn in &ge.grad_n {
            geo.grad.extend_from_slice(&gn[..dim]);
        }
        geo.wdet.push(w * ge.det_jac);
    }
    Ok(geo)
}

/// Inputs of one element evaluation.
pub(crate) struct Local<'a> {
    pub problem: &'a PdeProblem,
    pub geo: &'a Geo,
    pub u: &'a [f64],
    /// Nodal control values (zeros when the problem has none).
    pub c: &'a [f64],
    pub prev: Option<&'a [f64]>,
    pub detach: bool,
}

impl Local<'_> {
    fn detached(&self) -> bool {
        self.detach && self.problem.has_state_dependent_coefficient()
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct LocalGrad {
    pub loss: f64,
    pub gu: Vec<f64>,
    /// Empty unless the control derivative was requested.
    pub gc: Vec<f64>,
}

macro_rules! with_width {
    ($m:expr, $f:ident($($a:expr),*)) => {
        match $m {
            0..=4 => $f::<4>($($a),*),
            5..=8 => $f::<8>($($a),*),
            9..=12 => $f::<12>($($a),*),
            13..=16 => $f::<16>($($a),*),
            m => panic!("{m} element unknowns exceed the supported jet width"),
        }
    };
}

pub(crate) fn local_value(l: &Local) -> f64 {
    if l.detached() {
        return local_grad(l, false).loss;
    }
    energy::<f64>(l.problem, l.geo, l.u, l.c, l.prev)
}

pub(crate) fn local_grad(l: &Local, wrt_c: bool) -> LocalGrad {
    if l.detached() {
        let (r, j) = with_width!(l.u.len() + l.c.len(), jac_kernel(l));
        return local_grad_from_jac(l, &r, &j, wrt_c);
    }
    let m = l.u.len() + if wrt_c { l.c.len() } else { 0 };
    with_width!(m, grad_kernel(l, wrt_c))
}

/// Gradient plus the Hessian applied to `(udot, cdot)`.
pub(crate) fn local_hvp(
    l: &Local,
    udot: Option<&[f64]>,
    cdot: Option<&[f64]>,
    wrt_c: bool,
) -> (LocalGrad, Vec<f64>, Vec<f64>) {
    let nu = l.u.len();
    let nc = l.c.len();
    if l.detached() {
        let (r, j) = with_width!(nu + nc, jac_kernel(l));
        let m = nu + nc;
        let g = local_grad_from_jac(l, &r, &j, wrt_c);
        let mut hu = vec![0.0; nu];
        let mut hc = if wrt_c { vec![0.0; nc] } else { Vec::new() };
        for a in 0..nu {
            if let Some(ud) = udot {
                hu[a] += (0..nu).map(|b| j[a * m + b] * ud[b]).sum::<f64>();
                if wrt_c {
                    for k in 0..nc {
                        hc[k] += j[a * m + nu + k] * ud[a];
                    }
                }
            }
            if let Some(cd) = cdot {
                hu[a] += (0..nc).map(|k| j[a * m + nu + k] * cd[k]).sum::<f64>();
            }
        }
        return (g, hu, hc);
    }
    let m = nu + if wrt_c { nc } else { 0 };
    with_width!(m, hvp_kernel(l, udot, cdot, wrt_c))
}

/// Gradient and dense Hessian over the element unknowns (u, then c when
/// `wrt_c`).
pub(crate) fn local_hess(l: &Local, wrt_c: bool) -> (LocalGrad, Vec<f64>) {
    let nu = l.u.len();
    let nc = l.c.len();
    if l.detached() {
        let (r, j) = with_width!(nu + nc, jac_kernel(l));
        let mj = nu + nc;
        let g = local_grad_from_jac(l, &r, &j, wrt_c);
        let m = nu + if wrt_c { nc } else { 0 };
        let mut h = vec![0.0; m * m];
        for a in 0..nu {
            for b in 0..m {
                h[a * m + b] = j[a * mj + b];
            }
            if wrt_c {
                for k in 0..nc {
                    h[(nu + k) * m + a] = j[a * mj + nu + k];
                }
            }
        }
        return (g, h);
    }
    let m = nu + if wrt_c { nc } else { 0 };
    with_width!(m, hess_kernel(l, wrt_c))
}

fn local_grad_from_jac(l: &Local, r: &[f64], j: &[f64], wrt_c: bool) -> LocalGrad {
    let nu = l.u.len();
    let m = nu + l.c.len();
    LocalGrad {
        loss: l.u.iter().zip(r).map(|(a, b)| a * b).sum(),
        gu: r.to_vec(),
        gc: if wrt_c {
            (0..l.c.len())
                .map(|k| (0..nu).map(|a| j[a * m + nu + k] * l.u[a]).sum())
                .collect()
        } else {
            Vec::new()
        },
    }
}

fn grad_kernel<const N: usize>(l: &Local, wrt_c: bool) -> LocalGrad {
    let nu = l.u.len();
    let u: Vec<Grad<N, f64>> = l.u.iter().enumerate().map(|(i, &x)| Grad::variable(x, i)).collect();
    let c: Vec<Grad<N, f64>> = l
        .c
        .iter()
        .enumerate()
        .map(|(k, &x)| if wrt_c { Grad::variable(x, nu + k) } else { Grad::constant(x) })
        .collect();
    let e = energy(l.problem, l.geo, &u, &c, l.prev);
    LocalGrad {
        loss: e.v,
        gu: e.d[..nu].to_vec(),
        gc: if wrt_c { e.d[nu..nu + l.c.len()].to_vec() } else { Vec::new() },
    }
}

fn hvp_kernel<const N: usize>(
    l: &Local,
    udot: Option<&[f64]>,
    cdot: Option<&[f64]>,
    wrt_c: bool,
) -> (LocalGrad, Vec<f64>, Vec<f64>) {
    let nu = l.u.len();
    let nc = l.c.len();
    let u: Vec<Grad<N, Dual>> = l
        .u
        .iter()
        .enumerate()
        .map(|(i, &x)| Grad::variable(Dual::new(x, udot.map_or(0.0, |d| d[i])), i))
        .collect();
    let c: Vec<Grad<N, Dual>> = l
        .c
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let v = Dual::new(x, cdot.map_or(0.0, |d| d[k]));
            if wrt_c {
                Grad::variable(v, nu + k)
            } else {
                Grad::constant(v)
            }
        })
        .collect();
    let e = energy(l.problem, l.geo, &u, &c, l.prev);
    let g = LocalGrad {
        loss: e.v.value,
        gu: e.d[..nu].iter().map(|d| d.value).collect(),
        gc: if wrt_c { e.d[nu..nu + nc].iter().map(|d| d.value).collect() } else { Vec::new() },
    };
    let hu = e.d[..nu].iter().map(|d| d.tangent).collect();
    let hc = if wrt_c { e.d[nu..nu + nc].iter().map(|d| d.tangent).collect() } else { Vec::new() };
    (g, hu, hc)
}

fn hess_kernel<const N: usize>(l: &Local, wrt_c: bool) -> (LocalGrad, Vec<f64>) {
    let nu = l.u.len();
    let nc = l.c.len();
    let var = |x: f64, i: usize| Grad::<N, Grad<N, f64>>::variable(Grad::variable(x, i), i);
    let u: Vec<_> = l.u.iter().enumerate().map(|(i, &x)| var(x, i)).collect();
    let c: Vec<_> = l
        .c
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            if wrt_c {
                var(x, nu + k)
            } else {
                Grad::constant(Grad::constant(x))
            }
        })
        .collect();
    let e = energy(l.problem, l.geo, &u, &c, l.prev);
    let m = nu + if wrt_c { nc } else { 0 };
    let mut h = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            h[a * m + b] = e.d[a].d[b];
        }
    }
    let g = LocalGrad {
        loss: e.v.v,
        gu: e.d[..nu].iter().map(|d| d.v).collect(),
        gc: if wrt_c { e.d[nu..m].iter().map(|d| d.v).collect() } else { Vec::new() },
    };
    (g, h)
}

/// Detached residual and its Jacobian in (u, c), row-major `nu × (nu+nc)`.
fn jac_kernel<const N: usize>(l: &Local) -> (Vec<f64>, Vec<f64>) {
    let nu = l.u.len();
    let m = nu + l.c.len();
    let u: Vec<Grad<N, f64>> = l.u.iter().enumerate().map(|(i, &x)| Grad::variable(x, i)).collect();
    let c: Vec<Grad<N, f64>> = l.c.iter().enumerate().map(|(k, &x)| Grad::variable(x, nu + k)).collect();
    let r = detached_residual(l.problem, l.geo, &u, &c, l.prev).expect("state-dependent coefficient");
    let mut j = vec![0.0; nu * m];
    for a in 0..nu {
        j[a * m..(a + 1) * m].copy_from_slice(&r[a].d[..m]);
    }
    (r.iter().map(|x| x.v).collect(), j)
}

/// Loss, gradient and optionally Hessian of a single element in its dofs.
#[allow(clippy::too_many_arguments)]
pub fn element_work(
    problem: &PdeProblem,
    elem_type: ElementType,
    coords_e: &[&[f64]],
    u_e: &[f64],
    c_e: &[f64],
    u_prev_e: Option<&[f64]>,
    want_hess: bool,
    options: &FemOptions,
) -> Result<ElementWork, FemError> {
    problem.validate()?;
    let nn = elem_type.n_nodes();
    let nu = nn * problem.n_comp(elem_type.dim());
    if u_e.len() != nu {
        return Err(FemError::Dimension(format!("element needs {nu} dofs, got {}", u_e.len())));
    }
    let zeros = vec![0.0; nn];
    let c_e = if problem.uses_control() {
        if c_e.len() != nn {
            return Err(FemError::Dimension(format!("element needs {nn} control values, got {}", c_e.len())));
        }
        check_control(c_e, None)?;
        c_e
    } else {
        &zeros
    };
    match (problem.is_transient(), u_prev_e) {
        (true, None) => return Err(FemError::MissingPrevious),
        (false, Some(_)) => {
            return Err(FemError::Dimension("previous step given for a stationary problem".into()))
        }
        (true, Some(p)) if p.len() != nu => {
            return Err(FemError::Dimension(format!("previous step needs {nu} values, got {}", p.len())))
        }
        _ => {}
    }
    let geo = build_geo(elem_type, coords_e)?;
    let local = Local {
        problem,
        geo: &geo,
        u: u_e,
        c: c_e,
        prev: u_prev_e,
        detach: options.detach_residual,
    };
    let (g, hess) = if want_hess {
        let (g, h) = local_hess(&local, false);
        (g, Some(h))
    } else {
        (local_grad(&local, false), None)
    };
    if !g.loss.is_finite() || g.gu.iter().any(|x| !x.is_finite()) {
        return Err(FemError::NonFinite { element: None });
    }
    Ok(ElementWork {
        loss: g.loss,
        grad: g.gu,
        hess,
    })
}

pub(crate) fn check_control(c: &[f64], node_offset: Option<&[usize]>) -> Result<(), FemError> {
    for (i, &x) in c.iter().enumerate() {
        if !(x.is_finite() && x > 0.0) {
            let node = node_offset.map_or(i, |nodes| nodes[i]);
            return Err(FemError::Material { node, value: x });
        }
    }
    Ok(())
}
