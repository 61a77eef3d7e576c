#![allow(dead_code)]

use ifol_core::fem::{ElasticConstants, PdeProblem};
use ifol_core::mesh::{generate_grid, Mesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_grid(n: usize) -> Mesh {
    generate_grid(2, &[n, n], &[(0.0, 1.0), (0.0, 1.0)]).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Central differences of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
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

/// Central differences of a vector function, column `j` = ∂f/∂x_j.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let x0 = xp[j];
            xp[j] = x0 + h;
            let fp = f(&xp);
            xp[j] = x0 - h;
            let fm = f(&xp);
            xp[j] = x0;
            fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-300)
}

/// Every problem variant with moderate constants.
pub fn all_problems() -> Vec<PdeProblem> {
    vec![
        PdeProblem::LinearElasticity {
            constants: ElasticConstants::Young { e: 1.0, nu: 0.3 },
            plane_strain: true,
        },
        PdeProblem::Hyperelastic { mu: 1.0, kappa: 2.0 },
        PdeProblem::StationaryDiffusion { source: 0.5 },
        PdeProblem::TransientThermal {
            alpha: 0.5,
            rho_cp: 1.0,
            dt: 0.1,
            source: 0.2,
        },
        PdeProblem::AllenCahn { eps: 0.5, dt: 0.1 },
    ]
}

/// Random state for `problem` on `mesh`: `(u, c, prev)`.
pub fn random_state(problem: &PdeProblem, mesh: &Mesh, seed: u64) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let mut r = rng(seed);
    let n_dof = mesh.n_nodes() * problem.n_comp(mesh.dim);
    let amp = match problem {
        PdeProblem::Hyperelastic { .. } | PdeProblem::LinearElasticity { .. } => 0.05,
        _ => 1.0,
    };
    let u = uniform(&mut r, n_dof, -amp, amp);
    let c = uniform(&mut r, mesh.n_nodes(), 0.2, 1.0);
    let prev = problem.is_transient().then(|| uniform(&mut r, n_dof, -1.0, 1.0));
    (u, c, prev)
}
