mod common;

use common::*;
use ifol_core::mesh::*;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn parent_point(t: ElementType) -> impl Strategy<Value = Vec<f64>> {
    match t {
        ElementType::Quad4 => prop::collection::vec(-1.0f64..=1.0, 2).boxed(),
        ElementType::Tri3 => (0.0f64..=1.0, 0.0f64..=1.0)
            .prop_map(|(a, b)| if a + b <= 1.0 { vec![a, b] } else { vec![1.0 - a, 1.0 - b] })
            .boxed(),
        ElementType::Tet4 => (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0)
            .prop_map(|(a, b, c)| {
                // Fold the unit cube into the simplex by sorting.
                let mut v = [a, b, c];
                v.sort_by(f64::total_cmp);
                vec![v[0], v[1] - v[0], v[2] - v[1]]
            })
            .boxed(),
    }
}

fn partition_of_unity(t: ElementType, xi: &[f64]) -> Result<(), TestCaseError> {
    let se = shape_eval(t, xi).unwrap();
    prop_assert!((se.n.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    for a in 0..t.dim() {
        prop_assert!(se.dn_dxi.iter().map(|d| d[a]).sum::<f64>().abs() < 1e-13);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn quad_partition_of_unity(xi in parent_point(ElementType::Quad4)) {
        partition_of_unity(ElementType::Quad4, &xi)?;
    }

    #[test]
    fn tri_partition_of_unity(xi in parent_point(ElementType::Tri3)) {
        partition_of_unity(ElementType::Tri3, &xi)?;
    }

    #[test]
    fn tet_partition_of_unity(xi in parent_point(ElementType::Tet4)) {
        partition_of_unity(ElementType::Tet4, &xi)?;
    }
}

proptest! {
    #[test]
    fn linear_fields_are_reproduced(a in prop::collection::vec(-3.0f64..3.0, 3), b in -2.0f64..2.0,
                                    jiggle in prop::collection::vec(-0.15f64..0.15, 8)) {
        // Perturbed quad, a triangle and a tet.
        let quad: Vec<Vec<f64>> = vec![
            vec![0.0 + jiggle[0], 0.0 + jiggle[1]],
            vec![1.0 + jiggle[2], 0.0 + jiggle[3]],
            vec![1.0 + jiggle[4], 1.0 + jiggle[5]],
            vec![0.0 + jiggle[6], 1.0 + jiggle[7]],
        ];
        let tri: Vec<Vec<f64>> = vec![vec![0.1, 0.0], vec![1.2, 0.3], vec![0.2, 0.9]];
        let tet: Vec<Vec<f64>> = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.1, 0.0], vec![0.2, 1.0, 0.1], vec![0.1, 0.2, 0.8]];
        for (t, nodes) in [(ElementType::Quad4, quad), (ElementType::Tri3, tri), (ElementType::Tet4, tet)] {
            let d = t.dim();
            let f = |x: &[f64]| b + (0..d).map(|k| a[k] * x[k]).sum::<f64>();
            let fv: Vec<f64> = nodes.iter().map(|x| f(x)).collect();
            let xe: Vec<&[f64]> = nodes.iter().map(|x| x.as_slice()).collect();
            for xi in quadrature(t).points {
                let se = shape_eval(t, &xi).unwrap();
                let ge = geometry_map(t, &xe, &se).unwrap();
                let x: Vec<f64> = (0..d).map(|k| se.n.iter().zip(&nodes).map(|(n, p)| n * p[k]).sum()).collect();
                let interp: f64 = se.n.iter().zip(&fv).map(|(n, v)| n * v).sum();
                prop_assert!((interp - f(&x)).abs() < 1e-12);
                for k in 0..d {
                    let g: f64 = ge.grad_n.iter().zip(&fv).map(|(gn, v)| gn[k] * v).sum();
                    prop_assert!((g - a[k]).abs() < 1e-12);
                }
                for k in 0..d {
                    prop_assert!(ge.grad_n.iter().map(|gn| gn[k]).sum::<f64>().abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grid_volume_matches_box(nx in 2usize..7, ny in 2usize..7, lx in 0.2f64..3.0, ly in 0.2f64..3.0, x0 in -1.0f64..1.0) {
        let m = generate_grid(2, &[nx, ny], &[(x0, x0 + lx), (0.0, ly)]).unwrap();
        prop_assert_eq!(m.n_nodes(), nx * ny);
        prop_assert!((m.volume().unwrap() - lx * ly).abs() < 1e-12);
    }
}

#[test]
fn shape_values_at_reference_points() {
    let c = shape_eval(ElementType::Quad4, &[0.0, 0.0]).unwrap();
    assert_eq!(c.n, vec![0.25; 4]);
    let corner = shape_eval(ElementType::Quad4, &[-1.0, -1.0]).unwrap();
    assert_eq!(corner.n, vec![1.0, 0.0, 0.0, 0.0]);
    let t = shape_eval(ElementType::Tet4, &[0.25, 0.25, 0.25]).unwrap();
    assert!(t.n.iter().all(|v| (v - 0.25).abs() < 1e-15));
    assert!(shape_eval(ElementType::Quad4, &[1.5, 0.0]).is_err());
    assert!(shape_eval(ElementType::Tri3, &[0.7, 0.7]).is_err());
}

#[test]
fn quadrature_rules() {
    let q = quadrature(ElementType::Quad4);
    assert_eq!(q.weights, vec![1.0; 4]);
    let g = 1.0 / 3f64.sqrt();
    assert!(q.points.iter().all(|p| p.iter().all(|x| (x.abs() - g).abs() < 1e-15)));
    // x²y² over [-1,1]² is 4/9, integrated exactly by 2×2 Gauss.
    let i: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| w * p[0] * p[0] * p[1] * p[1]).sum();
    assert!((i - 4.0 / 9.0).abs() < 1e-15);
    let t = quadrature(ElementType::Tri3);
    assert_eq!(t.weights, vec![0.5]);
    assert!((t.points[0][0] - 1.0 / 3.0).abs() < 1e-15);
    let t = quadrature(ElementType::Tet4);
    assert!(t.weights.iter().all(|w| (w - 1.0 / 24.0).abs() < 1e-16));
    assert!((t.weights.iter().sum::<f64>() - 1.0 / 6.0).abs() < 1e-15);
    // Linear functions over the reference tet: ∫ x = 1/24.
    let ix: f64 = t.points.iter().zip(&t.weights).map(|(p, w)| w * p[0]).sum();
    assert!((ix - 1.0 / 24.0).abs() < 1e-15);
}

#[test]
fn geometry_of_reference_squares() {
    let unit: Vec<&[f64]> = vec![&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]];
    let parent: Vec<&[f64]> = vec![&[-1.0, -1.0], &[1.0, -1.0], &[1.0, 1.0], &[-1.0, 1.0]];
    let mut r = rng(0);
    for _ in 0..20 {
        let xi = uniform(&mut r, 2, -1.0, 1.0);
        let se = shape_eval(ElementType::Quad4, &xi).unwrap();
        let g = geometry_map(ElementType::Quad4, &unit, &se).unwrap();
        assert!(rel_err(&g.jac, &[0.5, 0.0, 0.0, 0.5]) < 1e-15);
        assert!((g.det_jac - 0.25).abs() < 1e-15);
        let g = geometry_map(ElementType::Quad4, &parent, &se).unwrap();
        assert!(rel_err(&g.jac, &[1.0, 0.0, 0.0, 1.0]) < 1e-15);
        assert!((g.det_jac - 1.0).abs() < 1e-15);
    }
    let degenerate: Vec<&[f64]> = vec![&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]];
    let se = shape_eval(ElementType::Quad4, &[-1.0, -1.0]).unwrap();
    assert!(matches!(geometry_map(ElementType::Quad4, &degenerate, &se), Err(MeshError::InvertedElement { .. })));
    let coords = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
    let mesh = Mesh::new(2, ElementType::Quad4, coords, vec![vec![0, 1, 2, 3]], Default::default());
    assert!(matches!(mesh, Err(MeshError::InvertedElement { element: Some(0), .. })));
}

#[test]
fn generated_grids() {
    let m = generate_grid(2, &[3, 3], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
    assert_eq!((m.n_nodes(), m.n_elements(), m.elem_type), (9, 4, ElementType::Quad4));
    assert_eq!(generate_grid(2, &[41, 41], &[(0.0, 1.0), (0.0, 1.0)]).unwrap().n_nodes(), 1681);
    assert_eq!(generate_grid(2, &[51, 51], &[(0.0, 1.0), (0.0, 1.0)]).unwrap().n_nodes(), 2601);
    for set in ["left", "right", "bottom", "top"] {
        assert_eq!(m.node_set(set).unwrap().len(), 3);
    }
    assert!(generate_grid(2, &[1, 3], &[(0.0, 1.0), (0.0, 1.0)]).is_err());
    let t = generate_grid(3, &[3, 2, 4], &[(0.0, 2.0), (0.0, 1.0), (0.0, 0.5)]).unwrap();
    assert_eq!(t.n_nodes(), 24);
    assert_eq!(t.n_elements(), 2 * 3 * 6);
    assert!((t.volume().unwrap() - 1.0).abs() < 1e-12);
    for set in ["left", "right", "bottom", "top", "front", "back"] {
        assert!(!t.node_set(set).unwrap().is_empty(), "{set}");
    }
}

#[test]
fn json_round_trip_and_validation() {
    let m = generate_grid(2, &[4, 3], &[(0.0, 1.0), (0.0, 2.0)]).unwrap();
    let back = Mesh::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.fingerprint(), m.fingerprint());
    let bad = Mesh::new(2, ElementType::Tri3, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0, 1, 5]], BTreeMap::new());
    assert!(bad.is_err());
    let inverted = Mesh::new(2, ElementType::Tri3, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0, 2, 1]], BTreeMap::new());
    assert!(matches!(inverted, Err(MeshError::InvertedElement { element: Some(0), .. })));
    let dup = Mesh::new(
        2,
        ElementType::Tri3,
        vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![0, 1, 2]],
        BTreeMap::from([("s".to_string(), vec![1, 1])]),
    );
    assert!(dup.is_err());
}

#[test]
fn interpolation_reproduces_linear_fields() {
    let coarse = generate_grid(2, &[4, 3], &[(0.0, 2.0), (-1.0, 1.0)]).unwrap();
    let f = |x: &[f64]| 0.3 + 1.7 * x[0] - 0.4 * x[1];
    let field: Vec<f64> = coarse.coords.iter().map(|x| f(x)).collect();
    let mut r = rng(5);
    let pts: Vec<Vec<f64>> = (0..200).map(|_| vec![uniform(&mut r, 1, 0.0, 2.0)[0], uniform(&mut r, 1, -1.0, 1.0)[0]]).collect();
    let vals = interpolate(&coarse, &field, 1, &pts).unwrap();
    for (p, v) in pts.iter().zip(&vals) {
        assert!((v - f(p)).abs() < 1e-12);
    }
    // Nodes of the coarse mesh reproduce nodal values.
    let at_nodes = interpolate(&coarse, &field, 1, &coarse.coords).unwrap();
    for (a, b) in at_nodes.iter().zip(&field) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!(interpolate(&coarse, &field, 1, &[vec![2.5, 0.0]]).is_err());
    assert!(interpolate(&coarse, &field[1..], 1, &pts).is_err());
}

#[test]
fn interpolation_on_tetrahedra_and_skewed_quads() {
    let tets = generate_grid(3, &[3, 3, 3], &[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]).unwrap();
    let f = |x: &[f64]| [x[0] - 2.0 * x[1] + x[2], 1.0 + x[2]];
    let field: Vec<f64> = tets.coords.iter().flat_map(|x| f(x)).collect();
    let mut r = rng(6);
    let pts: Vec<Vec<f64>> = (0..100).map(|_| uniform(&mut r, 3, 0.0, 1.0)).collect();
    let vals = interpolate(&tets, &field, 2, &pts).unwrap();
    for (p, v) in pts.iter().zip(vals.chunks(2)) {
        let e = f(p);
        assert!((v[0] - e[0]).abs() < 1e-12 && (v[1] - e[1]).abs() < 1e-12);
    }
    // A bilinear map needs the Newton inverse; bilinear fields stay exact.
    let coords = vec![vec![0.0, 0.0], vec![2.0, 0.2], vec![2.5, 1.9], vec![-0.3, 1.2]];
    let quad = Mesh::new(2, ElementType::Quad4, coords, vec![vec![0, 1, 2, 3]], BTreeMap::new()).unwrap();
    let xi = [0.3, -0.6];
    let se = shape_eval(ElementType::Quad4, &xi).unwrap();
    let x: Vec<f64> = (0..2).map(|k| quad.coords.iter().zip(&se.n).map(|(c, n)| n * c[k]).sum()).collect();
    let (e, back) = locate(&quad, &x).unwrap();
    assert_eq!(e, 0);
    assert!((back[0] - xi[0]).abs() < 1e-12 && (back[1] - xi[1]).abs() < 1e-12);
}
