use super::{geometry_map, shape_eval, ElementType, Mesh, MeshError};

/// How far outside an element (in parent coordinates) a point may sit and
/// still count as inside; absorbs roundoff at shared edges.
const SLACK: f64 = 1e-9;

/// Parent coordinates of `x` in element `e`, if it lies inside.
pub fn parent_coords(mesh: &Mesh, e: usize, x: &[f64]) -> Option<Vec<f64>> {
    let et = mesh.elem_type;
    let dim = et.dim();
    let xe = mesh.element_coords(e);
    for k in 0..dim {
        let lo = xe.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = xe.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        let pad = SLACK * (hi - lo).max(1.0);
        if x[k] < lo - pad || x[k] > hi + pad {
            return None;
        }
    }
    // Affine for simplices, so one Newton step from the centroid is exact.
    let mut xi = match et {
        ElementType::Quad4 => vec![0.0; 2],
        ElementType::Tri3 => vec![1.0 / 3.0; 2],
        ElementType::Tet4 => vec![0.25; 3],
    };
    let iters = if et == ElementType::Quad4 { 20 } else { 1 };
    for _ in 0..iters {
        let se = shape_eval(et, &xi).ok()?;
        let g = geometry_map(et, &xe, &se).ok()?;
        let mut r = vec![0.0; dim];
        for (n, p) in se.n.iter().zip(&xe) {
            for k in 0..dim {
                r[k] += n * p[k];
            }
        }
        for k in 0..dim {
            r[k] = x[k] - r[k];
        }
        // jac[a][b] = ∂x_b/∂ξ_a, so dx = Jᵀ dξ.
        let step = solve_transposed(&g.jac, &r, dim)?;
        let mut moved = 0.0f64;
        for a in 0..dim {
            xi[a] += step[a];
            moved = moved.max(step[a].abs());
        }
        if moved < 1e-15 {
            break;
        }
    }
    let inside = match et {
        ElementType::Quad4 => xi.iter().all(|v| v.abs() <= 1.0 + SLACK),
        _ => xi.iter().all(|&v| v >= -SLACK) && xi.iter().sum::<f64>() <= 1.0 + SLACK,
    };
    if !inside {
        return None;
    }
    match et {
        ElementType::Quad4 => xi.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0)),
        _ => {
            xi.iter_mut().for_each(|v| *v = v.max(0.0));
            let s: f64 = xi.iter().sum();
            if s > 1.0 {
                xi.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    Some(xi)
}

fn solve_transposed(jac: &[f64], r: &[f64], dim: usize) -> Option<Vec<f64>> {
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            a[i * dim + j] = jac[j * dim + i];
        }
    }
    let m = crate::linalg::DenseMatrix::from_rows(&a.chunks(dim).map(<[f64]>::to_vec).collect::<Vec<_>>());
    crate::oracle::linear_solve(&m, r).ok()
}

/// First element containing `x` and the parent coordinates there.
pub fn locate(mesh: &Mesh, x: &[f64]) -> Option<(usize, Vec<f64>)> {
    (0..mesh.n_elements()).find_map(|e| parent_coords(mesh, e, x).map(|xi| (e, xi)))
}

/// Finite-element interpolant of a nodal field (`n_comp` values per node)
/// at arbitrary points. Points outside the mesh are an error.
pub fn interpolate(mesh: &Mesh, field: &[f64], n_comp: usize, points: &[Vec<f64>]) -> Result<Vec<f64>, MeshError> {
    if field.len() != mesh.n_nodes() * n_comp {
        return Err(MeshError::Argument(format!(
            "field has {} values for {} nodes × {n_comp}",
            field.len(),
            mesh.n_nodes()
        )));
    }
    let mut out = Vec::with_capacity(points.len() * n_comp);
    for p in points {
        let (e, xi) = locate(mesh, p).ok_or_else(|| MeshError::Argument(format!("point {p:?} is outside the mesh")))?;
        let se = shape_eval(mesh.elem_type, &xi)?;
        for k in 0..n_comp {
            out.push(
                mesh.elements[e]
                    .iter()
                    .zip(&se.n)
                    .map(|(&node, n)| n * field[node * n_comp + k])
                    .sum(),
            );
        }
    }
    Ok(out)
}
