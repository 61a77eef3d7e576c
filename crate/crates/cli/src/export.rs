//! Field export: legacy ASCII VTK and a CSV mirror.

use crate::error::{CliError, Result};
use ifol_core::mesh::{ElementType, Mesh};
use std::fmt::Write as _;
use std::path::Path;

/// A named nodal field with `n_comp` values per node.
pub struct Field<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
    pub n_comp: usize,
}

fn vtk_cell_type(t: ElementType) -> u8 {
    match t {
        ElementType::Tri3 => 5,
        ElementType::Quad4 => 9,
        ElementType::Tet4 => 10,
    }
}

pub fn vtk_string(mesh: &Mesh, fields: &[Field]) -> String {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nifol field\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_nodes());
    for x in &mesh.coords {
        let z = x.get(2).copied().unwrap_or(0.0);
        let _ = writeln!(s, "{:e} {:e} {:e}", x[0], x.get(1).copied().unwrap_or(0.0), z);
    }
    let nn = mesh.elem_type.n_nodes();
    let _ = writeln!(s, "CELLS {} {}", mesh.n_elements(), mesh.n_elements() * (nn + 1));
    for conn in &mesh.elements {
        s.push_str(&nn.to_string());
        for i in conn {
            let _ = write!(s, " {i}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {}", mesh.n_elements());
    for _ in &mesh.elements {
        let _ = writeln!(s, "{}", vtk_cell_type(mesh.elem_type));
    }
    let _ = writeln!(s, "POINT_DATA {}", mesh.n_nodes());
    for f in fields {
        if f.n_comp == 1 {
            let _ = writeln!(s, "SCALARS {} double 1\nLOOKUP_TABLE default", f.name);
            for v in f.values {
                let _ = writeln!(s, "{v:e}");
            }
        } else {
            let _ = writeln!(s, "VECTORS {} double", f.name);
            for v in f.values.chunks(f.n_comp) {
                let c = |k: usize| v.get(k).copied().unwrap_or(0.0);
                let _ = writeln!(s, "{:e} {:e} {:e}", c(0), c(1), c(2));
            }
        }
    }
    s
}

pub fn csv_string(mesh: &Mesh, fields: &[Field]) -> String {
    let mut s = String::from("node");
    for k in ["x", "y", "z"].iter().take(mesh.dim) {
        let _ = write!(s, ",{k}");
    }
    for f in fields {
        if f.n_comp == 1 {
            let _ = write!(s, ",{}", f.name);
        } else {
            for k in 0..f.n_comp {
                let _ = write!(s, ",{}_{k}", f.name);
            }
        }
    }
    s.push('\n');
    for (i, x) in mesh.coords.iter().enumerate() {
        s.push_str(&i.to_string());
        for v in x {
            let _ = write!(s, ",{v:e}");
        }
        for f in fields {
            for v in &f.values[i * f.n_comp..(i + 1) * f.n_comp] {
                let _ = write!(s, ",{v:e}");
            }
        }
        s.push('\n');
    }
    s
}

/// Writes `<stem>.vtk` and `<stem>.csv` in `dir`.
pub fn write_fields(dir: &Path, stem: &str, mesh: &Mesh, fields: &[Field]) -> Result<()> {
    for f in fields {
        if f.values.len() != mesh.n_nodes() * f.n_comp {
            return Err(CliError::Config(format!("field {} does not match the mesh", f.name)));
        }
    }
    write_text(&dir.join(format!("{stem}.vtk")), &vtk_string(mesh, fields))?;
    write_text(&dir.join(format!("{stem}.csv")), &csv_string(mesh, fields))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Plain CSV table with a header row; floats in shortest round-trip form.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            text: columns.join(",") + "\n",
        }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let parts: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::F(v) => format!("{v:e}"),
                Cell::U(v) => v.to_string(),
                Cell::S(v) => v.to_string(),
            })
            .collect();
        self.text.push_str(&parts.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.text)
    }
}

pub enum Cell<'a> {
    F(f64),
    U(u64),
    S(&'a str),
}
