//! Finite-difference verification suites.

use crate::error::Result;
use ifol_core::fem::{
    DirichletEntry, DirichletSpec, ElasticConstants, FemModel, FemOptions, PdeProblem,
};
use ifol_core::field_net::{init_params, CoordNorm, FieldNetConfig};
use ifol_core::learning::{infer, meta_gradient, LrSchedule, Sample, Task, TrainConfig};
use ifol_core::mesh::{generate_grid, Mesh};
use ifol_core::oracle::{adjoint_sensitivity, ifol_sensitivity, integral, newton_solve, NewtonConfig};
use ifol_core::rng::stream;
use rand::Rng;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: String,
    pub case: String,
    pub rel_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tol
    }
}

/// Every problem variant with moderate constants.
pub fn problems() -> Vec<(&'static str, PdeProblem)> {
    vec![
        (
            "linear_elasticity",
            PdeProblem::LinearElasticity {
                constants: ElasticConstants::Young { e: 1.0, nu: 0.3 },
                plane_strain: true,
            },
        ),
        ("hyperelastic", PdeProblem::Hyperelastic { mu: 1.0, kappa: 2.0 }),
        ("stationary_diffusion", PdeProblem::StationaryDiffusion { source: 0.5 }),
        (
            "transient_thermal",
            PdeProblem::TransientThermal {
                alpha: 0.5,
                rho_cp: 1.0,
                dt: 0.1,
                source: 0.2,
            },
        ),
        ("allen_cahn", PdeProblem::AllenCahn { eps: 0.5, dt: 0.1 }),
    ]
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-300)
}

fn central(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = xp[i];
            xp[i] = x0 + h;
            let fp = f(&xp);
            xp[i] = x0 - h;
            let fm = f(&xp);
            xp[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn square(n: usize) -> Mesh {
    generate_grid(2, &[n, n], &[(0.0, 1.0), (0.0, 1.0)]).expect("valid grid")
}

/// Random `(u, c, prev)` of moderate size for `problem`.
pub fn random_state(problem: &PdeProblem, mesh: &Mesh, seed: u64) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let mut r = stream(seed, "gradcheck");
    let n_dof = mesh.n_nodes() * problem.n_comp(mesh.dim);
    let amp = match problem {
        PdeProblem::Hyperelastic { .. } | PdeProblem::LinearElasticity { .. } => 0.05,
        _ => 1.0,
    };
    let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| r.gen_range(lo..hi)).collect() };
    let u = draw(n_dof, -amp, amp);
    let c = draw(mesh.n_nodes(), 0.2, 1.0);
    let prev = problem.is_transient().then(|| draw(n_dof, -1.0, 1.0));
    (u, c, prev)
}

/// Assembled loss gradient and tangent against central differences on a
/// 2×2-element mesh, worst case over `seeds`.
pub fn fem_suites(seeds: u64) -> Result<Vec<CheckResult>> {
    let mesh = Arc::new(square(3));
    let mut out = Vec::new();
    for (name, p) in problems() {
        let model = FemModel::new(mesh.clone(), p, &[], FemOptions::default())?;
        let (mut g_worst, mut t_worst) = (0.0f64, 0.0f64);
        for seed in 0..seeds {
            let (u, c, prev) = random_state(&p, &mesh, seed);
            let prev = prev.as_deref();
            let (_, g, _) = model.gradient(&u, &c, prev, false)?;
            let fd = central(|x| model.loss(x, &c, prev).unwrap_or(f64::NAN), &u, 1e-5);
            g_worst = g_worst.max(rel_err(&g, &fd));
            let (_, _, k) = model.tangent(&u, &c, prev)?;
            let k = k.to_dense();
            let mut up = u.clone();
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..u.len() {
                let h = 1e-5;
                up[j] = u[j] + h;
                let gp = model.gradient(&up, &c, prev, false)?.1;
                up[j] = u[j] - h;
                let gm = model.gradient(&up, &c, prev, false)?.1;
                up[j] = u[j];
                for i in 0..u.len() {
                    let d = (gp[i] - gm[i]) / (2.0 * h);
                    num += (k.get(i, j) - d).powi(2);
                    den += d * d;
                }
            }
            t_worst = t_worst.max((num / den.max(1e-300)).sqrt());
        }
        let case = format!("{name} ({seeds} seeds)");
        out.push(CheckResult { suite: "fem_gradient".into(), case: case.clone(), rel_err: g_worst, tol: 1e-6 });
        out.push(CheckResult { suite: "fem_tangent".into(), case, rel_err: t_worst, tol: 1e-5 });
    }
    Ok(out)
}

fn one_element_task(hidden: Vec<usize>, latent: usize) -> Result<Task> {
    let mesh = Arc::new(square(2));
    let model = Arc::new(FemModel::new(mesh.clone(), PdeProblem::StationaryDiffusion { source: 1.0 }, &[], FemOptions::default())?);
    let dir = DirichletSpec::new(vec![DirichletEntry { node: 0, comp: 0, value: 1.0 }])?;
    let net = FieldNetConfig { in_dim: 2, out_dim: 1, hidden, omega0: 30.0, latent_dim: latent };
    Ok(Task::new(net, model, dir, CoordNorm::from_mesh(&mesh))?)
}

fn encode_cfg(k: usize) -> TrainConfig {
    TrainConfig {
        k_encode: k,
        alpha: 1e-2,
        lr: LrSchedule { start: 1e-3, end: 1e-4 },
        batch_size: 1,
        epochs: 1,
        grad_norm: false,
        first_order: false,
        seed: 0,
    }
}

/// Unrolled meta-gradient against differences of the encode-then-loss
/// composite; width-4 network, latent size 2, one element.
pub fn meta_suite() -> Result<Vec<CheckResult>> {
    let task = one_element_task(vec![4], 2)?;
    let params = init_params(&task.net, 3)?;
    let s = Sample::stationary(0, vec![0.5, 0.8, 0.3, 0.9]);
    let mut out = Vec::new();
    for k in 1..=3 {
        let cfg = encode_cfg(k);
        let (_, g) = meta_gradient(&s, &params, &task, &cfg)?;
        let flat = params.to_flat();
        let f = |x: &[f64]| {
            let mut p = params.clone();
            p.set_flat(x).expect("same length");
            meta_gradient(&s, &p, &task, &cfg).map(|r| r.0).unwrap_or(f64::NAN)
        };
        let fd = central(f, &flat, 1e-6);
        out.push(CheckResult { suite: "meta_gradient".into(), case: format!("K = {k}"), rel_err: rel_err(&g, &fd), tol: 1e-4 });
    }
    Ok(out)
}

/// Adjoint map of `∫ T dΩ` against re-solved differences on a 3×3 grid,
/// and the network sensitivity against differences of inference.
pub fn sensitivity_suites() -> Result<Vec<CheckResult>> {
    let mesh = Arc::new(square(3));
    let model = FemModel::new(mesh.clone(), PdeProblem::StationaryDiffusion { source: 0.0 }, &[], FemOptions::default())?;
    let left = mesh.node_set("left")?.to_vec();
    let right = mesh.node_set("right")?.to_vec();
    let entries = left
        .iter()
        .map(|&node| DirichletEntry { node, comp: 0, value: 1.0 })
        .chain(right.iter().map(|&node| DirichletEntry { node, comp: 0, value: 0.0 }))
        .collect();
    let dir = DirichletSpec::new(entries)?;
    let newton = NewtonConfig { tol_residual: 1e-13, ..NewtonConfig::default() };
    let c: Vec<f64> = (0..mesh.n_nodes()).map(|i| 0.4 + 0.07 * i as f64).collect();
    let zero = vec![0.0; mesh.n_nodes()];
    let u = newton_solve(&model, &c, None, &dir, &zero, &newton)?.u;
    let adj = adjoint_sensitivity(&model, &c, None, &dir, &u)?;
    let j = |cc: &[f64]| {
        newton_solve(&model, cc, None, &dir, &zero, &newton)
            .map(|r| integral(&model, &r.u))
            .unwrap_or(f64::NAN)
    };
    let fd = central(j, &c, 1e-5);
    let mut out = vec![CheckResult {
        suite: "adjoint".into(),
        case: "3x3 nonlinear diffusion".into(),
        rel_err: rel_err(&adj.map, &fd),
        tol: 1e-3,
    }];
    let task = one_element_task(vec![6], 3)?;
    let params = init_params(&task.net, 2)?;
    let s = Sample::stationary(0, vec![0.5, 0.8, 0.3, 0.9]);
    let cfg = encode_cfg(3);
    let net = ifol_sensitivity(&s, &params, &task, &cfg)?;
    let jn = |cc: &[f64]| {
        infer(&Sample::stationary(0, cc.to_vec()), &params, &task, &cfg, None)
            .map(|u| integral(&task.model, &u))
            .unwrap_or(f64::NAN)
    };
    // The map is O(α³)-small, so a wide step keeps roundoff down.
    let fd = central(jn, &s.c, 1e-3);
    out.push(CheckResult {
        suite: "network_sensitivity".into(),
        case: "one element, K = 3".into(),
        rel_err: rel_err(&net.map, &fd),
        tol: 1e-4,
    });
    Ok(out)
}

pub fn run_all(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut all = fem_suites(seeds)?;
    all.extend(meta_suite()?);
    all.extend(sensitivity_suites()?);
    Ok(all)
}
