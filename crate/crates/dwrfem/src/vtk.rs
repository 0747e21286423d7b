//! Legacy ASCII VTK export of active meshes.
//!
//! One file holds the view's triangles, any number of scalar point-data
//! fields (finite element functions sampled at the mesh vertices, which
//! for degree one is exact and for higher degrees drops the interior
//! detail), and any number of per-cell scalar fields such as error
//! indicators. All numbers are written in a fixed format so identical
//! inputs produce identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::mesh::MeshView;
use crate::space::FeFunction;
use crate::{Error, Result};

/// Renders one unstructured-grid file as a string.
///
/// Every point field must live on a space over `view`; every cell field
/// must have one value per view cell.
pub fn render_vtk(
    title: &str,
    view: &MeshView,
    point_fields: &[(&str, &FeFunction)],
    cell_fields: &[(&str, &[f64])],
) -> Result<String> {
    let n_pts = view.vertex_ids.len();
    let n_cells = view.cell_vertices.len();
    for (name, f) in point_fields {
        if f.space.view.cell_vertices != view.cell_vertices {
            return Err(Error::Config(format!(
                "point field {name:?} lives on a different mesh than the export view"
            )));
        }
    }
    for (name, c) in cell_fields {
        if c.len() != n_cells {
            return Err(Error::Config(format!(
                "cell field {name:?} has {} values for {n_cells} cells",
                c.len()
            )));
        }
    }

    let local = |v: usize| -> usize {
        view.vertex_ids
            .binary_search(&v)
            .expect("cell vertex missing from the view's vertex set")
    };

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let mut line = title.replace(['\n', '\r'], " ");
    line.truncate(255);
    out.push_str(&line);
    out.push('\n');
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");

    writeln!(out, "POINTS {n_pts} double").unwrap();
    for &v in &view.vertex_ids {
        let p = view.vertices[v];
        writeln!(out, "{:.9e} {:.9e} 0", p[0], p[1]).unwrap();
    }

    writeln!(out, "CELLS {n_cells} {}", 4 * n_cells).unwrap();
    for tri in &view.cell_vertices {
        writeln!(out, "3 {} {} {}", local(tri[0]), local(tri[1]), local(tri[2])).unwrap();
    }
    writeln!(out, "CELL_TYPES {n_cells}").unwrap();
    for _ in 0..n_cells {
        out.push_str("5\n");
    }

    if !point_fields.is_empty() {
        writeln!(out, "POINT_DATA {n_pts}").unwrap();
        for (name, f) in point_fields {
            writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
            // Vertex sampling: the Lagrange coefficient at a corner node is
            // the value there.
            let mut vals = vec![0.0; n_pts];
            for (k, tri) in view.cell_vertices.iter().enumerate() {
                for lv in 0..3 {
                    vals[local(tri[lv])] = f.coeffs[f.space.cell_dofs[k][lv]];
                }
            }
            for v in vals {
                writeln!(out, "{v:.9e}").unwrap();
            }
        }
    }

    if !cell_fields.is_empty() {
        writeln!(out, "CELL_DATA {n_cells}").unwrap();
        for (name, c) in cell_fields {
            writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
            for v in *c {
                writeln!(out, "{v:.9e}").unwrap();
            }
        }
    }

    Ok(out)
}

/// Renders and writes one file.
pub fn write_vtk(
    path: &Path,
    title: &str,
    view: &MeshView,
    point_fields: &[(&str, &FeFunction)],
    cell_fields: &[(&str, &[f64])],
) -> Result<()> {
    let body = render_vtk(title, view, point_fields, cell_fields)?;
    std::fs::write(path, body)?;
    Ok(())
}
