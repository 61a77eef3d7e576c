use super::{geometry_map, shape_eval, ElementType, Mesh, MeshError};
use std::collections::BTreeMap;

/// Structured grid over an axis-aligned box: Quad4 cells in 2D, each hex
/// cell split into six Tet4 in 3D. Nodes are numbered x-fastest.
pub fn generate_grid(dim: usize, counts: &[usize], bounds: &[(f64, f64)]) -> Result<Mesh, MeshError> {
    if dim != 2 && dim != 3 {
        return Err(MeshError::Argument(format!("dimension must be 2 or 3, got {dim}")));
    }
    if counts.len() != dim || bounds.len() != dim {
        return Err(MeshError::Argument(format!(
            "need {dim} node counts and bounds, got {} and {}",
            counts.len(),
            bounds.len()
        )));
    }
    if let Some(c) = counts.iter().find(|&&c| c < 2) {
        return Err(MeshError::Argument(format!("at least 2 nodes per axis required, got {c}")));
    }
    if let Some(b) = bounds.iter().find(|b| !(b.1 > b.0)) {
        return Err(MeshError::Argument(format!("empty axis range {b:?}")));
    }
    let axis = |a: usize, i: usize| {
        let (lo, hi) = bounds[a];
        if i + 1 == counts[a] {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (counts[a] - 1) as f64
        }
    };
    if dim == 2 {
        let (nx, ny) = (counts[0], counts[1]);
        let id = |i: usize, j: usize| j * nx + i;
        let mut coords = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                coords.push(vec![axis(0, i), axis(1, j)]);
            }
        }
        let mut elements = Vec::with_capacity((nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                elements.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut sets = BTreeMap::new();
        sets.insert("left".into(), (0..ny).map(|j| id(0, j)).collect());
        sets.insert("right".into(), (0..ny).map(|j| id(nx - 1, j)).collect());
        sets.insert("bottom".into(), (0..nx).map(|i| id(i, 0)).collect());
        sets.insert("top".into(), (0..nx).map(|i| id(i, ny - 1)).collect());
        return Ok(Mesh {
            dim,
            elem_type: ElementType::Quad4,
            coords,
            elements,
            node_sets: sets,
        });
    }

    let (nx, ny, nz) = (counts[0], counts[1], counts[2]);
    let id = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let mut coords = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                coords.push(vec![axis(0, i), axis(1, j), axis(2, k)]);
            }
        }
    }
    // Kuhn subdivision: every tet walks from corner 0 to corner 6 along one
    // permutation of the axes, so neighbouring cells share face diagonals.
    const KUHN: [[usize; 4]; 6] = [
        [0, 1, 2, 6],
        [0, 1, 5, 6],
        [0, 3, 2, 6],
        [0, 3, 7, 6],
        [0, 4, 5, 6],
        [0, 4, 7, 6],
    ];
    let se = shape_eval(ElementType::Tet4, &[0.25, 0.25, 0.25])?;
    let mut elements = Vec::with_capacity(6 * (nx - 1) * (ny - 1) * (nz - 1));
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner = [
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ];
                for tet in KUHN {
                    let mut conn: Vec<usize> = tet.iter().map(|&c| corner[c]).collect();
                    let xe: Vec<&[f64]> = conn.iter().map(|&n| coords[n].as_slice()).collect();
                    if geometry_map(ElementType::Tet4, &xe, &se).is_err() {
                        conn.swap(1, 2);
                    }
                    elements.push(conn);
                }
            }
        }
    }
    let mut sets = BTreeMap::new();
    let plane = |f: &dyn Fn(usize, usize, usize) -> bool| -> Vec<usize> {
        let mut v = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if f(i, j, k) {
                        v.push(id(i, j, k));
                    }
                }
            }
        }
        v
    };
    sets.insert("left".into(), plane(&|i, _, _| i == 0));
    sets.insert("right".into(), plane(&|i, _, _| i == nx - 1));
    sets.insert("bottom".into(), plane(&|_, j, _| j == 0));
    sets.insert("top".into(), plane(&|_, j, _| j == ny - 1));
    sets.insert("front".into(), plane(&|_, _, k| k == 0));
    sets.insert("back".into(), plane(&|_, _, k| k == nz - 1));
    Mesh::new(3, ElementType::Tet4, coords, elements, sets)
}
