mod common;

use common::*;
use ifol_core::fem::{
    element_work, DirichletEntry, DirichletSpec, FemModel, FemOptions, NeumannLoad, PdeProblem, Want,
};
use ifol_core::mesh::{generate_grid, ElementType};
use std::sync::Arc;

fn model(problem: PdeProblem, n: usize) -> FemModel {
    FemModel::new(Arc::new(unit_grid(n)), problem, &[], FemOptions::default()).unwrap()
}

#[test]
fn gradient_matches_central_differences_for_every_problem() {
    for problem in all_problems() {
        let m = model(problem, 3);
        for seed in 0..20 {
            let (u, c, prev) = random_state(&problem, m.mesh(), seed);
            let (_, g, gc) = m.gradient(&u, &c, prev.as_deref(), true).unwrap();
            let fd = fd_gradient(|x| m.loss(x, &c, prev.as_deref()).unwrap(), &u, 1e-5);
            let e = rel_err(&g, &fd);
            assert!(e < 1e-6, "{problem:?} seed {seed}: grad rel err {e:e}");
            if problem.uses_control() {
                let fdc = fd_gradient(|x| m.loss(&u, x, prev.as_deref()).unwrap(), &c, 1e-5);
                let e = rel_err(&gc, &fdc);
                assert!(e < 1e-6, "{problem:?} seed {seed}: control grad rel err {e:e}");
            }
        }
    }
}

#[test]
fn tangent_matches_differences_of_residual_and_is_symmetric() {
    for problem in all_problems() {
        let m = model(problem, 3);
        for seed in 0..20 {
            let (u, c, prev) = random_state(&problem, m.mesh(), seed);
            let (_, _, k) = m.tangent(&u, &c, prev.as_deref()).unwrap();
            let cols = fd_jacobian(|x| m.gradient(x, &c, prev.as_deref(), false).unwrap().1, &u, 1e-5);
            let dense = k.to_dense();
            let mut num = 0.0;
            let mut den = 0.0;
            for (j, col) in cols.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    num += (dense.get(i, j) - v).powi(2);
                    den += v * v;
                }
            }
            let e = (num / den).sqrt();
            assert!(e < 1e-5, "{problem:?} seed {seed}: tangent rel err {e:e}");
            assert!(k.is_symmetric(1e-10 * dense.max_abs()), "{problem:?} tangent not symmetric");
        }
    }
}

#[test]
fn hessian_vector_products_match_tangent_and_mixed_block() {
    for problem in all_problems() {
        let m = model(problem, 3);
        let (u, c, prev) = random_state(&problem, m.mesh(), 99);
        let mut r = rng(5);
        let ud = uniform(&mut r, u.len(), -1.0, 1.0);
        let cd = uniform(&mut r, c.len(), -1.0, 1.0);
        let d = m.directional(&u, &c, prev.as_deref(), Some(&ud), Some(&cd), true).unwrap();
        // Oracle: differences of the assembled gradients along the direction.
        let h = 1e-5;
        let shift = |s: f64| {
            let up: Vec<f64> = u.iter().zip(&ud).map(|(a, b)| a + s * b).collect();
            let cp: Vec<f64> = if problem.uses_control() {
                c.iter().zip(&cd).map(|(a, b)| a + s * b).collect()
            } else {
                c.clone()
            };
            m.gradient(&up, &cp, prev.as_deref(), true).unwrap()
        };
        let (p, q) = (shift(h), shift(-h));
        let fd_u: Vec<f64> = p.1.iter().zip(&q.1).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        assert!(rel_err(&d.hess_u, &fd_u) < 1e-6, "{problem:?}: hess_u");
        if problem.uses_control() {
            let fd_c: Vec<f64> = p.2.iter().zip(&q.2).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            assert!(rel_err(&d.hess_c, &fd_c) < 1e-6, "{problem:?}: hess_c");
        }
    }
}

#[test]
fn detached_residual_mode_is_consistent() {
    let problem = PdeProblem::StationaryDiffusion { source: 0.0 };
    let opts = FemOptions { detach_residual: true };
    let m = FemModel::new(Arc::new(unit_grid(3)), problem, &[], opts).unwrap();
    let (u, c, _) = random_state(&problem, m.mesh(), 4);
    // Oracle: physical residual r_a = ∫ k(T) ∇N_a·∇T dΩ, independent of the
    // energy formulation, via a per-element quadrature loop.
    let full = model(problem, 3);
    let (_, g_det, _) = m.gradient(&u, &c, None, false).unwrap();
    let (_, g_full, _) = full.gradient(&u, &c, None, false).unwrap();
    assert!(rel_err(&g_det, &g_full) > 1e-3, "detached residual should differ from the energy gradient");
    let loss = m.loss(&u, &c, None).unwrap();
    let utr: f64 = u.iter().zip(&g_det).map(|(a, b)| a * b).sum();
    assert!((loss - utr).abs() < 1e-12 * utr.abs().max(1.0));
    // Tangent is the Jacobian of the residual.
    let (_, _, k) = m.tangent(&u, &c, None).unwrap();
    let cols = fd_jacobian(|x| m.gradient(x, &c, None, false).unwrap().1, &u, 1e-5);
    let dense = k.to_dense();
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            assert!((dense.get(i, j) - v).abs() < 1e-6 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn quad_laplacian_stiffness_matches_symbolic_matrix() {
    let coords: Vec<&[f64]> = vec![&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]];
    let w = element_work(
        &PdeProblem::StationaryDiffusion { source: 0.0 },
        ElementType::Quad4,
        &coords,
        &[0.0; 4],
        &[1.0; 4],
        None,
        true,
        &FemOptions::default(),
    )
    .unwrap();
    let h = w.hess.unwrap();
    // Symbolic ∫ ∇N_a·∇N_b over the unit square.
    let expected = [
        [2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0],
        [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0],
        [-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0],
        [-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0],
    ];
    for a in 0..4 {
        for b in 0..4 {
            assert!((h[a * 4 + b] - expected[a][b]).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_field_has_zero_diffusion_gradient() {
    let coords: Vec<&[f64]> = vec![&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]];
    let w = element_work(
        &PdeProblem::StationaryDiffusion { source: 0.0 },
        ElementType::Quad4,
        &coords,
        &[0.7; 4],
        &[0.3, 0.9, 0.5, 0.1],
        None,
        false,
        &FemOptions::default(),
    )
    .unwrap();
    assert_eq!(w.loss, 0.0);
    assert!(w.grad.iter().all(|g| g.abs() < 1e-15));
}

#[test]
fn allen_cahn_wells_are_stationary() {
    let coords: Vec<&[f64]> = vec![&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]];
    for s in [1.0, -1.0] {
        let u = [s; 4];
        let w = element_work(
            &PdeProblem::AllenCahn { eps: 0.05, dt: 0.01 },
            ElementType::Quad4,
            &coords,
            &u,
            &[],
            Some(&u),
            false,
            &FemOptions::default(),
        )
        .unwrap();
        assert!(w.grad.iter().all(|g| g.abs() < 1e-12), "{:?}", w.grad);
    }
}

#[test]
fn missing_previous_step_is_an_error() {
    let coords: Vec<&[f64]> = vec![&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]];
    let r = element_work(
        &PdeProblem::AllenCahn { eps: 0.05, dt: 0.01 },
        ElementType::Quad4,
        &coords,
        &[0.0; 4],
        &[],
        None,
        false,
        &FemOptions::default(),
    );
    assert!(r.is_err());
    let r = element_work(
        &PdeProblem::StationaryDiffusion { source: 0.0 },
        ElementType::Quad4,
        &coords,
        &[0.0; 4],
        &[1.0, f64::NAN, 1.0, 1.0],
        None,
        false,
        &FemOptions::default(),
    );
    assert!(r.is_err());
}

#[test]
fn global_tangent_equals_naive_dense_assembly() {
    let problem = PdeProblem::StationaryDiffusion { source: 0.0 };
    let mesh = unit_grid(3);
    let m = FemModel::new(Arc::new(mesh.clone()), problem, &[], FemOptions::default()).unwrap();
    let u = vec![0.0; 9];
    let c = vec![1.0; 9];
    let (_, _, k) = m.tangent(&u, &c, None).unwrap();
    // Oracle: loop over elements, scatter each element Hessian into a dense matrix.
    let mut dense = vec![vec![0.0; 9]; 9];
    for e in 0..mesh.n_elements() {
        let conn = &mesh.elements[e];
        let w = element_work(&problem, mesh.elem_type, &mesh.element_coords(e), &[0.0; 4], &[1.0; 4], None, true, &FemOptions::default()).unwrap();
        let h = w.hess.unwrap();
        for a in 0..4 {
            for b in 0..4 {
                dense[conn[a]][conn[b]] += h[a * 4 + b];
            }
        }
    }
    for i in 0..9 {
        for j in 0..9 {
            assert!((k.get(i, j) - dense[i][j]).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_field_gives_zero_loss_and_gradient() {
    let m = model(PdeProblem::StationaryDiffusion { source: 0.0 }, 4);
    let mut r = rng(1);
    let c = uniform(&mut r, 16, 0.1, 1.0);
    let w = m.assemble(&vec![0.0; 16], &c, None, &DirichletSpec::empty(), Want::Gradient).unwrap();
    assert_eq!(w.loss, 0.0);
    assert!(w.grad.iter().all(|&g| g == 0.0));
}

#[test]
fn linear_field_solves_laplace_on_a_strip() {
    // Two elements along x; u = x interpolated; Dirichlet at both ends.
    let mesh = generate_grid(2, &[3, 2], &[(0.0, 2.0), (0.0, 1.0)]).unwrap();
    let m = FemModel::new(Arc::new(mesh.clone()), PdeProblem::TransientThermal { alpha: 0.0, rho_cp: 1.0, dt: 1.0, source: 0.0 }, &[], FemOptions::default()).unwrap();
    let u: Vec<f64> = mesh.coords.iter().map(|x| x[0]).collect();
    let mut entries = Vec::new();
    for set in ["left", "right"] {
        for &n in mesh.node_set(set).unwrap() {
            entries.push(DirichletEntry { node: n, comp: 0, value: u[n] });
        }
    }
    let spec = DirichletSpec::new(entries).unwrap();
    // With u_prev = u the mass term vanishes and k = k0 = 1.
    let w = m.assemble(&u, &vec![1.0; 6], Some(&u), &spec, Want::Tangent).unwrap();
    assert!(w.residual.unwrap().iter().all(|r| r.abs() < 1e-12));
    let t = w.tangent.unwrap();
    for (dof, _) in spec.dofs(1) {
        assert_eq!(t.get(dof, dof), 1.0);
        for j in 0..6 {
            if j != dof {
                assert_eq!(t.get(dof, j), 0.0);
                assert_eq!(t.get(j, dof), 0.0);
            }
        }
    }
}

#[test]
fn translation_invariance_with_constant_conductivity() {
    // k = k0 when α = 0; with u_prev shifted too, the loss is unchanged.
    let problem = PdeProblem::TransientThermal { alpha: 0.0, rho_cp: 1.0, dt: 0.5, source: 0.0 };
    let m = model(problem, 4);
    let (u, c, prev) = random_state(&problem, m.mesh(), 3);
    let prev = prev.unwrap();
    let l0 = m.loss(&u, &c, Some(&prev)).unwrap();
    let us: Vec<f64> = u.iter().map(|x| x + 3.7).collect();
    let ps: Vec<f64> = prev.iter().map(|x| x + 3.7).collect();
    let l1 = m.loss(&us, &c, Some(&ps)).unwrap();
    assert!((l0 - l1).abs() < 1e-12 * l0.abs().max(1.0));
}

#[test]
fn neo_hookean_energy_is_translation_invariant() {
    let problem = PdeProblem::Hyperelastic { mu: 1.3, kappa: 4.0 };
    let mut r = rng(11);
    let base: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![1.1, 0.1], vec![1.0, 0.9], vec![-0.1, 1.0]];
    let u = uniform(&mut r, 8, -0.1, 0.1);
    let c = [1.0, 0.8, 1.2, 0.9];
    let eval = |shift: [f64; 2], ushift: [f64; 2]| {
        let xs: Vec<Vec<f64>> = base.iter().map(|x| vec![x[0] + shift[0], x[1] + shift[1]]).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let us: Vec<f64> = u.iter().enumerate().map(|(i, v)| v + ushift[i % 2]).collect();
        element_work(&problem, ElementType::Quad4, &refs, &us, &c, None, false, &FemOptions::default()).unwrap().loss
    };
    let e0 = eval([0.0, 0.0], [0.0, 0.0]);
    let e1 = eval([3.0, -2.0], [0.4, -0.7]);
    assert!((e0 - e1).abs() < 1e-10, "{e0} vs {e1}");
}

#[test]
fn thermal_mass_term_is_nonnegative() {
    let problem = PdeProblem::TransientThermal { alpha: 0.3, rho_cp: 2.0, dt: 0.1, source: 0.0 };
    let coords: Vec<&[f64]> = vec![&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]];
    let mut r = rng(2);
    for _ in 0..100 {
        let u = uniform(&mut r, 4, -2.0, 2.0);
        let p = uniform(&mut r, 4, -2.0, 2.0);
        // Constant u has no gradient term, so the loss is the mass term alone.
        let uc = [u[0]; 4];
        let w = element_work(&problem, ElementType::Quad4, &coords, &uc, &[1.0; 4], Some(&p), false, &FemOptions::default()).unwrap();
        assert!(w.loss >= 0.0);
    }
}

#[test]
fn neumann_flux_integrates_to_edge_length() {
    let mesh = unit_grid(5);
    let loads = [NeumannLoad { set: "right".into(), component: 0, flux: 2.0 }];
    let m = FemModel::new(Arc::new(mesh), PdeProblem::StationaryDiffusion { source: 0.0 }, &loads, FemOptions::default()).unwrap();
    let u = vec![1.0; 25];
    // Loss of a constant field is −∫_Γ flux·u = −2.
    let l = m.loss(&u, &vec![1.0; 25], None).unwrap();
    assert!((l + 2.0).abs() < 1e-12);
}

#[test]
fn three_dimensional_problems_assemble() {
    let mesh = generate_grid(3, &[2, 2, 2], &[(0.0, 1.0); 3]).unwrap();
    for problem in all_problems() {
        let m = FemModel::new(Arc::new(mesh.clone()), problem, &[], FemOptions::default()).unwrap();
        let (u, c, prev) = random_state(&problem, m.mesh(), 8);
        let (_, g, _) = m.gradient(&u, &c, prev.as_deref(), false).unwrap();
        let fd = fd_gradient(|x| m.loss(x, &c, prev.as_deref()).unwrap(), &u, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-6, "{problem:?}");
    }
}
