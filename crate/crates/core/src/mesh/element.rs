use super::MeshError;
use serde::{Deserialize, Serialize};

/// Linear isoparametric element families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementType {
    Quad4,
    Tri3,
    Tet4,
}

impl ElementType {
    pub const fn n_nodes(self) -> usize {
        match self {
            ElementType::Quad4 | ElementType::Tet4 => 4,
            ElementType::Tri3 => 3,
        }
    }

    pub const fn dim(self) -> usize {
        match self {
            ElementType::Quad4 | ElementType::Tri3 => 2,
            ElementType::Tet4 => 3,
        }
    }

    /// Measure of the parent domain: `[-1,1]²` for quads, the unit simplex
    /// otherwise.
    pub fn parent_measure(self) -> f64 {
        match self {
            ElementType::Quad4 => 4.0,
            ElementType::Tri3 => 0.5,
            ElementType::Tet4 => 1.0 / 6.0,
        }
    }

    /// Parent coordinates of the element nodes.
    pub fn parent_nodes(self) -> &'static [[f64; 3]] {
        match self {
            ElementType::Quad4 => &[
                [-1.0, -1.0, 0.0],
                [1.0, -1.0, 0.0],
                [1.0, 1.0, 0.0],
                [-1.0, 1.0, 0.0],
            ],
            ElementType::Tri3 => &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            ElementType::Tet4 => &[
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    /// Local node lists of the boundary facets (edges in 2D, faces in 3D).
    pub fn facets(self) -> &'static [&'static [usize]] {
        match self {
            ElementType::Quad4 => &[&[0, 1], &[1, 2], &[2, 3], &[3, 0]],
            ElementType::Tri3 => &[&[0, 1], &[1, 2], &[2, 0]],
            ElementType::Tet4 => &[&[0, 2, 1], &[0, 1, 3], &[1, 2, 3], &[0, 3, 2]],
        }
    }

    fn contains(self, xi: &[f64]) -> bool {
        const TOL: f64 = 1e-12;
        match self {
            ElementType::Quad4 => xi.iter().all(|x| x.abs() <= 1.0 + TOL),
            ElementType::Tri3 | ElementType::Tet4 => {
                xi.iter().all(|&x| x >= -TOL) && xi.iter().sum::<f64>() <= 1.0 + TOL
            }
        }
    }
}

/// Shape function values and parent-space gradients at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeEval {
    pub n: Vec<f64>,
    /// `dn_dxi[i][a]` = ∂N_i/∂ξ_a.
    pub dn_dxi: Vec<[f64; 3]>,
}

pub fn shape_eval(elem_type: ElementType, xi: &[f64]) -> Result<ShapeEval, MeshError> {
    let dim = elem_type.dim();
    if xi.len() != dim || !xi.iter().all(|x| x.is_finite()) || !elem_type.contains(xi) {
        return Err(MeshError::OutsideParent {
            elem_type,
            xi: xi.to_vec(),
        });
    }
    Ok(match elem_type {
        ElementType::Quad4 => {
            let (s, t) = (xi[0], xi[1]);
            let mut n = Vec::with_capacity(4);
            let mut dn = Vec::with_capacity(4);
            for p in elem_type.parent_nodes() {
                let (si, ti) = (p[0], p[1]);
                n.push(0.25 * (1.0 + s * si) * (1.0 + t * ti));
                dn.push([
                    0.25 * si * (1.0 + t * ti),
                    0.25 * ti * (1.0 + s * si),
                    0.0,
                ]);
            }
            ShapeEval { n, dn_dxi: dn }
        }
        ElementType::Tri3 => ShapeEval {
            n: vec![1.0 - xi[0] - xi[1], xi[0], xi[1]],
            dn_dxi: vec![[-1.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        },
        ElementType::Tet4 => ShapeEval {
            n: vec![1.0 - xi[0] - xi[1] - xi[2], xi[0], xi[1], xi[2]],
            dn_dxi: vec![
                [-1.0, -1.0, -1.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// 2×2 Gauss for quads, centroid rule for triangles, 4-point rule for tets.
pub fn quadrature(elem_type: ElementType) -> QuadratureRule {
    match elem_type {
        ElementType::Quad4 => {
            let g = 1.0 / 3f64.sqrt();
            let mut points = Vec::with_capacity(4);
            for &t in &[-g, g] {
                for &s in &[-g, g] {
                    points.push(vec![s, t]);
                }
            }
            QuadratureRule {
                points,
                weights: vec![1.0; 4],
            }
        }
        ElementType::Tri3 => QuadratureRule {
            points: vec![vec![1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![0.5],
        },
        ElementType::Tet4 => {
            let a = (5.0 + 3.0 * 5f64.sqrt()) / 20.0;
            let b = (5.0 - 5f64.sqrt()) / 20.0;
            QuadratureRule {
                points: vec![
                    vec![b, b, b],
                    vec![a, b, b],
                    vec![b, a, b],
                    vec![b, b, a],
                ],
                weights: vec![1.0 / 24.0; 4],
            }
        }
    }
}

/// Jacobian data of the isoparametric map at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct GeomEval {
    /// Row-major `dim×dim`, `jac[a][b]` = ∂x_b/∂ξ_a.
    pub jac: Vec<f64>,
    pub det_jac: f64,
    /// Physical gradients, `grad_n[i][b]` = ∂N_i/∂x_b.
    pub grad_n: Vec<[f64; 3]>,
}

pub fn geometry_map(
    elem_type: ElementType,
    coords_e: &[&[f64]],
    se: &ShapeEval,
) -> Result<GeomEval, MeshError> {
    let dim = elem_type.dim();
    if coords_e.len() != elem_type.n_nodes() || coords_e.iter().any(|c| c.len() < dim) {
        return Err(MeshError::Malformed(format!(
            "{:?} needs {} nodes of dimension {dim}",
            elem_type,
            elem_type.n_nodes()
        )));
    }
    let mut jac = vec![0.0; dim * dim];
    for (x, dn) in coords_e.iter().zip(&se.dn_dxi) {
        for a in 0..dim {
            for b in 0..dim {
                jac[a * dim + b] += dn[a] * x[b];
            }
        }
    }
    let (det, inv) = invert_small(&jac, dim);
    if !(det > 0.0) || !det.is_finite() {
        return Err(MeshError::InvertedElement {
            element: None,
            det_jac: det,
        });
    }
    // grad_x N = J⁻¹ grad_ξ N
    let grad_n = se
        .dn_dxi
        .iter()
        .map(|dn| {
            let mut g = [0.0; 3];
            for b in 0..dim {
                g[b] = (0..dim).map(|a| inv[b * dim + a] * dn[a]).sum();
            }
            g
        })
        .collect();
    Ok(GeomEval {
        jac,
        det_jac: det,
        grad_n,
    })
}

fn invert_small(m: &[f64], dim: usize) -> (f64, Vec<f64>) {
    match dim {
        2 => {
            let det = m[0] * m[3] - m[1] * m[2];
            let inv = vec![m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
            (det, inv)
        }
        3 => {
            let c00 = m[4] * m[8] - m[5] * m[7];
            let c01 = m[5] * m[6] - m[3] * m[8];
            let c02 = m[3] * m[7] - m[4] * m[6];
            let det = m[0] * c00 + m[1] * c01 + m[2] * c02;
            let inv = vec![
                c00 / det,
                (m[2] * m[7] - m[1] * m[8]) / det,
                (m[1] * m[5] - m[2] * m[4]) / det,
                c01 / det,
                (m[0] * m[8] - m[2] * m[6]) / det,
                (m[2] * m[3] - m[0] * m[5]) / det,
                c02 / det,
                (m[1] * m[6] - m[0] * m[7]) / det,
                (m[0] * m[4] - m[1] * m[3]) / det,
            ];
            (det, inv)
        }
        _ => unreachable!("only 2D and 3D elements exist"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [ElementType; 3] = [ElementType::Quad4, ElementType::Tri3, ElementType::Tet4];

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn quad_center_and_corner() {
        let s = shape_eval(ElementType::Quad4, &[0.0, 0.0]).unwrap();
        assert_eq!(s.n, vec![0.25; 4]);
        let s = shape_eval(ElementType::Quad4, &[-1.0, -1.0]).unwrap();
        assert_eq!(s.n, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tet_centroid() {
        let s = shape_eval(ElementType::Tet4, &[0.25, 0.25, 0.25]).unwrap();
        assert!(close(&s.n, &[0.25; 4], 1e-16));
    }

    #[test]
    fn nodal_interpolation_property() {
        for et in ALL {
            for (j, p) in et.parent_nodes().iter().enumerate() {
                let s = shape_eval(et, &p[..et.dim()]).unwrap();
                for (i, n) in s.n.iter().enumerate() {
                    assert_eq!(*n, if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn outside_parent_is_rejected() {
        assert!(shape_eval(ElementType::Quad4, &[1.5, 0.0]).is_err());
        assert!(shape_eval(ElementType::Tri3, &[0.7, 0.7]).is_err());
        assert!(shape_eval(ElementType::Tet4, &[-0.1, 0.2, 0.2]).is_err());
        assert!(shape_eval(ElementType::Quad4, &[0.0]).is_err());
    }

    #[test]
    fn quadrature_weights_and_points() {
        let q = quadrature(ElementType::Quad4);
        assert_eq!(q.weights, vec![1.0; 4]);
        for p in &q.points {
            for x in p {
                assert!((x.abs() - 1.0 / 3f64.sqrt()).abs() < 1e-16);
            }
        }
        let q = quadrature(ElementType::Tri3);
        assert_eq!(q.weights, vec![0.5]);
        let q = quadrature(ElementType::Tet4);
        assert_eq!(q.weights, vec![1.0 / 24.0; 4]);
        for et in ALL {
            let q = quadrature(et);
            let sum: f64 = q.weights.iter().sum();
            assert!((sum - et.parent_measure()).abs() < 1e-15);
            assert!(q.weights.iter().all(|w| *w > 0.0));
        }
    }

    #[test]
    fn gauss_2x2_integrates_x2y2() {
        // ∫∫ x² y² over [-1,1]² = (2/3)²
        let q = quadrature(ElementType::Quad4);
        let s: f64 = q
            .points
            .iter()
            .zip(&q.weights)
            .map(|(p, w)| w * p[0] * p[0] * p[1] * p[1])
            .sum();
        assert!((s - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn tet_rule_is_exact_for_linears() {
        // ∫ ξ over the unit tet = 1/24
        let q = quadrature(ElementType::Tet4);
        let s: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| w * p[0]).sum();
        assert!((s - 1.0 / 24.0).abs() < 1e-16);
    }

    #[test]
    fn unit_square_quad_jacobian() {
        let nodes: [&[f64]; 4] = [&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]];
        for xi in [[0.0, 0.0], [0.3, -0.8], [-1.0, 1.0]] {
            let se = shape_eval(ElementType::Quad4, &xi).unwrap();
            let g = geometry_map(ElementType::Quad4, &nodes, &se).unwrap();
            assert!(close(&g.jac, &[0.5, 0.0, 0.0, 0.5], 1e-15));
            assert!((g.det_jac - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn parent_identical_quad_is_identity() {
        let nodes: [&[f64]; 4] = [&[-1.0, -1.0], &[1.0, -1.0], &[1.0, 1.0], &[-1.0, 1.0]];
        let se = shape_eval(ElementType::Quad4, &[0.2, 0.1]).unwrap();
        let g = geometry_map(ElementType::Quad4, &nodes, &se).unwrap();
        assert!(close(&g.jac, &[1.0, 0.0, 0.0, 1.0], 1e-15));
        assert_eq!(g.det_jac, 1.0);
    }

    #[test]
    fn degenerate_quad_is_inverted() {
        let nodes: [&[f64]; 4] = [&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]];
        let se = shape_eval(ElementType::Quad4, &[-1.0, -1.0]).unwrap();
        assert!(matches!(
            geometry_map(ElementType::Quad4, &nodes, &se),
            Err(MeshError::InvertedElement { .. })
        ));
    }

    fn parent_point(et: ElementType, r: [f64; 3]) -> Vec<f64> {
        match et {
            ElementType::Quad4 => vec![2.0 * r[0] - 1.0, 2.0 * r[1] - 1.0],
            ElementType::Tri3 => {
                let (a, b) = if r[0] + r[1] > 1.0 { (1.0 - r[0], 1.0 - r[1]) } else { (r[0], r[1]) };
                vec![a, b]
            }
            ElementType::Tet4 => {
                let mut v = [r[0], r[1], r[2]];
                v.sort_by(f64::total_cmp);
                vec![v[0], v[1] - v[0], v[2] - v[1]]
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn partition_of_unity(a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64) {
            for et in ALL {
                let s = shape_eval(et, &parent_point(et, [a, b, c])).unwrap();
                prop_assert!((s.n.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                for k in 0..3 {
                    let g: f64 = s.dn_dxi.iter().map(|d| d[k]).sum();
                    prop_assert!(g.abs() < 1e-13);
                }
            }
        }

        #[test]
        fn physical_gradients_sum_to_zero(dx in -0.2..0.2f64, dy in -0.2..0.2f64, s in -1.0..1.0f64, t in -1.0..1.0f64) {
            let p: [[f64; 2]; 4] = [[0.0, 0.0], [1.0 + dx, 0.1], [1.2, 1.0 + dy], [-0.1, 0.9]];
            let nodes: Vec<&[f64]> = p.iter().map(|x| &x[..]).collect();
            let se = shape_eval(ElementType::Quad4, &[s, t]).unwrap();
            let g = geometry_map(ElementType::Quad4, &nodes, &se).unwrap();
            prop_assert!(g.det_jac > 0.0);
            for b in 0..2 {
                let sum: f64 = g.grad_n.iter().map(|v| v[b]).sum();
                prop_assert!(sum.abs() < 1e-13);
            }
        }
    }
}
