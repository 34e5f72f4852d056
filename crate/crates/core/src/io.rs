//! CSV tables and legacy VTK export.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::mesh::{SubdomainMesh, Vec3};

/// C-style `%.12e`: twelve fraction digits, signed exponent of at least two digits.
pub fn fmt_f64(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{v:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mantissa}e{sign}{digits:0>2}")
}

/// Comma-separated table with a header row and LF line endings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width does not match the header");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

pub enum CellField<'a> {
    Scalars(&'a [f64]),
    Vectors(&'a [Vec3]),
}

fn vtk_cell_type(dim: usize) -> u8 {
    match dim {
        1 => 3,
        2 => 5,
        _ => 10,
    }
}

/// Legacy ASCII VTK 3.0 unstructured grid with cell data.
pub fn vtk_string(mesh: &SubdomainMesh, title: &str, fields: &[(&str, CellField)]) -> String {
    let mut s = String::new();
    let n = mesh.num_cells();
    let k = mesh.dim() + 1;
    let _ = write!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.num_nodes());
    for p in mesh.nodes() {
        let _ = writeln!(s, "{} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z));
    }
    let _ = writeln!(s, "CELLS {} {}", n, n * (k + 1));
    for c in 0..n {
        s.push_str(&k.to_string());
        for v in mesh.cell_nodes(c) {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {n}");
    for _ in 0..n {
        let _ = writeln!(s, "{}", vtk_cell_type(mesh.dim()));
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "CELL_DATA {n}");
    }
    for (name, field) in fields {
        match field {
            CellField::Scalars(v) => {
                assert_eq!(v.len(), n);
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in *v {
                    let _ = writeln!(s, "{}", fmt_f64(*x));
                }
            }
            CellField::Vectors(v) => {
                assert_eq!(v.len(), n);
                let _ = writeln!(s, "VECTORS {name} double");
                for x in *v {
                    let _ = writeln!(s, "{} {} {}", fmt_f64(x.x), fmt_f64(x.y), fmt_f64(x.z));
                }
            }
        }
    }
    s
}

pub fn write_vtk(
    path: impl AsRef<Path>,
    mesh: &SubdomainMesh,
    title: &str,
    fields: &[(&str, CellField)],
) -> Result<()> {
    std::fs::write(path, vtk_string(mesh, title, fields))?;
    Ok(())
}
