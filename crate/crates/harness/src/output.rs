//! Output formats: the per-step diagnostics CSV, legacy ASCII VTK and
//! MatrixMarket dumps.
//!
//! Floats are written with `{:.17e}`, which round-trips every `f64` and keeps
//! files byte-identical between identical runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fefv_core::scheme::{pressure, SchemeParams, State};
use fefv_core::sparse::CsrMatrix;
use fefv_core::SimplicialMesh;

use crate::{io_error, HarnessError, Result};

/// One diagnostics line per completed time level.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub k: usize,
    pub t: f64,
    pub total_energy: f64,
    pub kinetic: f64,
    pub internal: f64,
    pub artificial: f64,
    /// `E^k - E^{k-1}`.
    pub energy_increment: f64,
    /// Termwise balance residual for `γ = 2`, NaN otherwise.
    pub energy_residual: f64,
    /// Entropy margin for the constant test function.
    pub entropy_margin: f64,
    /// Smallest margin over the constant and the random test functions.
    pub entropy_margin_min: f64,
    pub mass_rho: f64,
    pub mass_z: f64,
    pub min_rho: f64,
    pub min_theta: f64,
    pub max_theta: f64,
    /// `‖∇_h u^k‖_{L²}`.
    pub grad_u_l2: f64,
    pub div_u_l2: f64,
    pub rho_jumps: f64,
    pub z_jumps: f64,
    pub velocity_jump_penalty: f64,
    pub velocity_upwind: f64,
    pub picard_iters: usize,
    pub nl_residual: f64,
    pub used_homotopy: bool,
}

impl DiagnosticsRow {
    pub const HEADER: [&'static str; 24] = [
        "k",
        "t",
        "total_energy",
        "kinetic",
        "internal",
        "artificial",
        "energy_increment",
        "energy_residual",
        "entropy_margin",
        "entropy_margin_min",
        "mass_rho",
        "mass_Z",
        "min_rho",
        "min_theta",
        "max_theta",
        "grad_u_l2",
        "div_u_l2",
        "rho_jumps",
        "Z_jumps",
        "velocity_jump_penalty",
        "velocity_upwind",
        "picard_iters",
        "nl_residual",
        "used_homotopy",
    ];

    pub fn fields(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.17e}");
        vec![
            self.k.to_string(),
            f(self.t),
            f(self.total_energy),
            f(self.kinetic),
            f(self.internal),
            f(self.artificial),
            f(self.energy_increment),
            f(self.energy_residual),
            f(self.entropy_margin),
            f(self.entropy_margin_min),
            f(self.mass_rho),
            f(self.mass_z),
            f(self.min_rho),
            f(self.min_theta),
            f(self.max_theta),
            f(self.grad_u_l2),
            f(self.div_u_l2),
            f(self.rho_jumps),
            f(self.z_jumps),
            f(self.velocity_jump_penalty),
            f(self.velocity_upwind),
            self.picard_iters.to_string(),
            f(self.nl_residual),
            (self.used_homotopy as u8).to_string(),
        ]
    }
}

/// Streams diagnostics rows to a CSV file.
pub struct CsvSink {
    path: std::path::PathBuf,
    writer: csv::Writer<File>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path).map_err(|source| HarnessError::Csv { path: path.into(), source })?;
        writer
            .write_record(DiagnosticsRow::HEADER)
            .map_err(|source| HarnessError::Csv { path: path.into(), source })?;
        Ok(CsvSink { path: path.into(), writer })
    }

    pub fn push(&mut self, row: &DiagnosticsRow) -> Result<()> {
        self.writer
            .write_record(row.fields())
            .map_err(|source| HarnessError::Csv { path: self.path.clone(), source })
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(io_error(&self.path))
    }
}

fn vtk_geometry(w: &mut impl Write, mesh: &SimplicialMesh, title: &str) -> std::io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.vertices.len())?;
    for v in &mesh.vertices {
        writeln!(w, "{:.17e} {:.17e} 0", v[0], v[1])?;
    }
    let n = mesh.n_elements();
    writeln!(w, "CELLS {} {}", n, 4 * n)?;
    for e in &mesh.elements {
        writeln!(w, "3 {} {} {}", e.vertices[0], e.vertices[1], e.vertices[2])?;
    }
    writeln!(w, "CELL_TYPES {n}")?;
    for _ in 0..n {
        // VTK_TRIANGLE
        writeln!(w, "5")?;
    }
    Ok(())
}

fn scalars(w: &mut impl Write, name: &str, values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in values {
        writeln!(w, "{v:.17e}")?;
    }
    Ok(())
}

/// Mesh only, with the element volumes as cell data.
pub fn write_mesh_vtk(w: &mut impl Write, mesh: &SimplicialMesh) -> std::io::Result<()> {
    vtk_geometry(w, mesh, "fefv mesh")?;
    writeln!(w, "CELL_DATA {}", mesh.n_elements())?;
    let vol: Vec<f64> = mesh.elements.iter().map(|e| e.volume).collect();
    scalars(w, "volume", &vol)
}

/// Cell arrays `rho`, `theta`, `p` and the vector `u_bar`.
pub fn write_state_vtk(w: &mut impl Write, mesh: &SimplicialMesh, state: &State, params: &SchemeParams) -> Result<()> {
    let (p, _) = pressure(&state.z, params)?;
    let mut body = || -> std::io::Result<()> {
        vtk_geometry(w, mesh, &format!("fefv state k={} t={:.17e}", state.k, state.k as f64 * params.dt))?;
        writeln!(w, "CELL_DATA {}", mesh.n_elements())?;
        scalars(w, "rho", &state.rho.values)?;
        scalars(w, "theta", &state.theta.values)?;
        scalars(w, "p", &p.values)?;
        writeln!(w, "VECTORS u_bar double")?;
        for u in state.u_bar(mesh) {
            writeln!(w, "{:.17e} {:.17e} 0", u[0], u[1])?;
        }
        Ok(())
    };
    body().map_err(io_error("<vtk stream>"))
}

fn to_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(io_error(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| match e {
        HarnessError::Io { source, .. } => HarnessError::Io { path: path.into(), source },
        other => other,
    })?;
    w.flush().map_err(io_error(path))
}

pub fn save_state_vtk(path: &Path, mesh: &SimplicialMesh, state: &State, params: &SchemeParams) -> Result<()> {
    to_file(path, |w| write_state_vtk(w, mesh, state, params))
}

pub fn save_mesh_vtk(path: &Path, mesh: &SimplicialMesh) -> Result<()> {
    to_file(path, |w| write_mesh_vtk(w, mesh).map_err(io_error(path)))
}

pub fn save_matrix_market(path: &Path, a: &CsrMatrix) -> Result<()> {
    to_file(path, |w| a.write_matrix_market(w).map_err(io_error(path)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fefv_core::spaces::{CellField, CrVectorField};

    fn two_triangles() -> (SimplicialMesh, State, SchemeParams) {
        let m = SimplicialMesh::unit_square(1).unwrap();
        let s = State::new(0, CellField::constant(&m, 2.0), CellField::constant(&m, 0.5), CrVectorField::zeros(&m, true));
        let p = SchemeParams { gamma: 2.0, a: 1.0, mu: 0.1, lambda: 0.0, epsilon: 1.5, delta: 0.25, dt: 0.1, t_final: 0.1 };
        (m, s, p)
    }

    #[test]
    fn state_file_layout() {
        let (m, s, p) = two_triangles();
        let mut a = Vec::new();
        write_state_vtk(&mut a, &m, &s, &p).unwrap();
        let mut b = Vec::new();
        write_state_vtk(&mut b, &m, &s, &p).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[2], "ASCII");
        assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
        assert_eq!(lines[4], "POINTS 4 double");
        assert!(text.contains("CELLS 2 8\n"));
        assert!(text.contains("CELL_TYPES 2\n5\n5\n"));
        assert!(text.contains("CELL_DATA 2\n"));
        for name in ["SCALARS rho double 1", "SCALARS theta double 1", "SCALARS p double 1", "VECTORS u_bar double"] {
            assert!(text.contains(name), "{name}");
        }
        // p = Z^2 = 1
        let p_at = lines.iter().position(|l| *l == "SCALARS p double 1").unwrap();
        assert_eq!(lines[p_at + 2].parse::<f64>().unwrap(), 1.0);
        assert_eq!(lines[p_at + 3].parse::<f64>().unwrap(), 1.0);
    }

    #[test]
    fn row_matches_header() {
        let row = DiagnosticsRow {
            k: 1, t: 0.1, total_energy: 1.0, kinetic: 0.0, internal: 1.0, artificial: 0.0, energy_increment: 0.0,
            energy_residual: f64::NAN, entropy_margin: 0.0, entropy_margin_min: 0.0, mass_rho: 1.0, mass_z: 1.0,
            min_rho: 1.0, min_theta: 1.0, max_theta: 1.0, grad_u_l2: 0.0, div_u_l2: 0.0, rho_jumps: 0.0, z_jumps: 0.0,
            velocity_jump_penalty: 0.0, velocity_upwind: 0.0, picard_iters: 0, nl_residual: 0.0, used_homotopy: false,
        };
        let f = row.fields();
        assert_eq!(f.len(), DiagnosticsRow::HEADER.len());
        assert_eq!(f[1], "1.00000000000000006e-1");
        assert_eq!(f[7], "NaN");
    }
}
