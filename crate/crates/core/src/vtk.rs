//! Legacy ASCII VTK output: one unstructured grid with all sub-domain
//! triangles and one with the fracture cells as lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::geometry::MixedDimMesh;
use crate::interface::InterfaceState;
use crate::mfem::cell_velocity;
use crate::problem::FractureLayout;
use crate::subdomain::SubdomainFields;

/// Files written by [`export_fields`].
#[derive(Debug, Clone)]
pub struct VtkFiles {
    pub matrix: PathBuf,
    pub fractures: PathBuf,
}

fn header(out: &mut String, title: &str) {
    out.push_str("# vtk DataFile Version 3.0\n");
    writeln!(out, "{title}").unwrap();
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
}

fn scalars(out: &mut String, name: &str, values: &[f64]) {
    writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
    for v in values {
        writeln!(out, "{v:e}").unwrap();
    }
}

fn vectors(out: &mut String, name: &str, values: &[[f64; 2]]) {
    writeln!(out, "VECTORS {name} double").unwrap();
    for v in values {
        writeln!(out, "{:e} {:e} 0", v[0], v[1]).unwrap();
    }
}

/// Sub-domain triangles with cell pressure, centroid velocity and the
/// sub-domain id.
pub fn matrix_vtk(mesh: &MixedDimMesh, fields: &[SubdomainFields]) -> String {
    let mut out = String::new();
    header(&mut out, "rock matrix");
    let n_points: usize = mesh.subdomains.iter().map(|s| s.vertices.len()).sum();
    let n_cells = mesh.n_triangles();
    writeln!(out, "POINTS {n_points} double").unwrap();
    for sd in &mesh.subdomains {
        for v in &sd.vertices {
            writeln!(out, "{:e} {:e} 0", v[0], v[1]).unwrap();
        }
    }
    writeln!(out, "CELLS {n_cells} {}", 4 * n_cells).unwrap();
    let mut base = 0;
    for sd in &mesh.subdomains {
        for t in &sd.triangles {
            writeln!(out, "3 {} {} {}", base + t[0], base + t[1], base + t[2]).unwrap();
        }
        base += sd.vertices.len();
    }
    writeln!(out, "CELL_TYPES {n_cells}").unwrap();
    for _ in 0..n_cells {
        out.push_str("5\n");
    }
    let (mut p, mut u, mut id) = (Vec::new(), Vec::new(), Vec::new());
    for (sd, f) in mesh.subdomains.iter().zip(fields) {
        for t in 0..sd.n_cells() {
            p.push(f.p[t]);
            u.push(cell_velocity(sd, t, &f.u));
            id.push(sd.id as f64);
        }
    }
    writeln!(out, "CELL_DATA {n_cells}").unwrap();
    scalars(&mut out, "pressure", &p);
    vectors(&mut out, "velocity", &u);
    scalars(&mut out, "subdomain", &id);
    out
}

/// Fracture mortar cells as lines with pressure and cell-averaged
/// tangential velocity.
pub fn fracture_vtk(mesh: &MixedDimMesh, state: &InterfaceState) -> String {
    let layout = FractureLayout::new(mesh);
    let mut out = String::new();
    header(&mut out, "fracture network");
    let n_points: usize = mesh.branches.iter().map(|b| b.mortar.nodes.len()).sum();
    let n_cells = mesh.n_mortar();
    writeln!(out, "POINTS {n_points} double").unwrap();
    for b in &mesh.branches {
        for &s in &b.mortar.nodes {
            let x = b.segment.at(s);
            writeln!(out, "{:e} {:e} 0", x[0], x[1]).unwrap();
        }
    }
    writeln!(out, "CELLS {n_cells} {}", 3 * n_cells).unwrap();
    for (bi, b) in mesh.branches.iter().enumerate() {
        let base = layout.u_offsets[bi];
        for c in 0..b.mortar.n_cells() {
            writeln!(out, "2 {} {}", base + c, base + c + 1).unwrap();
        }
    }
    writeln!(out, "CELL_TYPES {n_cells}").unwrap();
    for _ in 0..n_cells {
        out.push_str("3\n");
    }
    let (mut u, mut branch) = (Vec::new(), Vec::new());
    for (bi, b) in mesh.branches.iter().enumerate() {
        let t = b.segment.tangent();
        let uo = layout.u_offsets[bi];
        for c in 0..b.mortar.n_cells() {
            let s = 0.5 * (state.u[uo + c] + state.u[uo + c + 1]);
            u.push([s * t[0], s * t[1]]);
            branch.push(bi as f64);
        }
    }
    writeln!(out, "CELL_DATA {n_cells}").unwrap();
    scalars(&mut out, "pressure", &state.p);
    vectors(&mut out, "velocity", &u);
    scalars(&mut out, "branch", &branch);
    out
}

/// Writes `matrix.vtk` and `fractures.vtk` into `dir`.
pub fn export_fields(
    mesh: &MixedDimMesh,
    state: &InterfaceState,
    fields: &[SubdomainFields],
    dir: &Path,
) -> Result<VtkFiles> {
    fs::create_dir_all(dir)?;
    let files = VtkFiles {
        matrix: dir.join("matrix.vtk"),
        fractures: dir.join("fractures.vtk"),
    };
    fs::write(&files.matrix, matrix_vtk(mesh, fields))?;
    fs::write(&files.fractures, fracture_vtk(mesh, state))?;
    Ok(files)
}

/// The mesh alone, with zero fields.
pub fn export_mesh(mesh: &MixedDimMesh, dir: &Path) -> Result<VtkFiles> {
    let zero_fields: Vec<SubdomainFields> = mesh
        .subdomains
        .iter()
        .map(|s| SubdomainFields::zeros(s.n_edges(), s.n_cells()))
        .collect();
    let state = InterfaceState::zeros(&FractureLayout::new(mesh));
    export_fields(mesh, &state, &zero_fields, dir)
}
