//! Approximation rates of the cell and Crouzeix-Raviart projections, and
//! refinement behaviour of the discrete Poincaré and trace constants.

use std::f64::consts::PI;

use fefv_core::mesh::Point;
use fefv_core::quadrature::integrate_face;
use fefv_core::spaces::{
    cell_l2_error, cr_grad_error, cr_grad_l2_norm, cr_l2_error, cr_l2_norm, project_cell, project_cr_scalar,
    CrScalarField, Vector2,
};
use fefv_core::SimplicialMesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::Result;

pub const EOC_CELL_L2: f64 = 0.9;
pub const EOC_CR_L2: f64 = 1.9;
pub const EOC_CR_GRAD: f64 = 0.9;
/// Largest admitted growth of the Poincaré ratio from one mesh to the next.
pub const POINCARE_GROWTH: f64 = 1.1;

fn smooth(x: Point) -> f64 {
    (PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + 0.5 * (3.0 * x[0] + x[1]).cos()
}

fn smooth_grad(x: Point) -> Vector2 {
    let s = (3.0 * x[0] + x[1]).sin();
    [
        PI * (PI * x[0]).cos() * (2.0 * PI * x[1]).cos() - 1.5 * s,
        -2.0 * PI * (PI * x[0]).sin() * (2.0 * PI * x[1]).sin() - 0.5 * s,
    ]
}

fn eocs(h: &[f64], e: &[f64]) -> Vec<f64> {
    (1..e.len()).map(|i| (e[i - 1] / e[i]).ln() / (h[i - 1] / h[i]).ln()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionRates {
    pub n: Vec<usize>,
    pub h: Vec<f64>,
    pub cell_l2: Vec<f64>,
    pub cr_l2: Vec<f64>,
    pub cr_grad: Vec<f64>,
    pub eoc_cell_l2: Vec<f64>,
    pub eoc_cr_l2: Vec<f64>,
    pub eoc_cr_grad: Vec<f64>,
}

impl ProjectionRates {
    /// Every consecutive order must reach its threshold.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, e, min) in [
            ("cell projection L2", &self.eoc_cell_l2, EOC_CELL_L2),
            ("CR projection L2", &self.eoc_cr_l2, EOC_CR_L2),
            ("CR projection gradient", &self.eoc_cr_grad, EOC_CR_GRAD),
        ] {
            for (i, v) in e.iter().enumerate() {
                if !(*v >= min) {
                    out.push(format!("{name}: EOC {v:.4} < {min} between n = {} and {}", self.n[i], self.n[i + 1]));
                }
            }
        }
        out
    }
}

/// Projection errors of a fixed trigonometric function on unit-square meshes.
pub fn projection_rates(sizes: &[usize]) -> Result<ProjectionRates> {
    let mut r = ProjectionRates {
        n: sizes.to_vec(),
        h: Vec::new(),
        cell_l2: Vec::new(),
        cr_l2: Vec::new(),
        cr_grad: Vec::new(),
        eoc_cell_l2: Vec::new(),
        eoc_cr_l2: Vec::new(),
        eoc_cr_grad: Vec::new(),
    };
    for &n in sizes {
        let m = SimplicialMesh::unit_square(n)?;
        let pq = project_cell(&m, smooth);
        let pv = project_cr_scalar(&m, smooth, false);
        r.h.push(m.h);
        r.cell_l2.push(cell_l2_error(&m, &pq, smooth));
        r.cr_l2.push(cr_l2_error(&m, &pv, smooth));
        r.cr_grad.push(cr_grad_error(&m, &pv, smooth_grad));
    }
    r.eoc_cell_l2 = eocs(&r.h, &r.cell_l2);
    r.eoc_cr_l2 = eocs(&r.h, &r.cr_l2);
    r.eoc_cr_grad = eocs(&r.h, &r.cr_grad);
    Ok(r)
}

/// Random no-slip CR field: projected low-frequency sine modes plus
/// small face noise.
pub fn random_v0h_field(rng: &mut ChaCha8Rng, mesh: &SimplicialMesh) -> CrScalarField {
    let c: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = |x: Point| {
        let mut s = 0.0;
        for (i, ci) in c.iter().enumerate() {
            let (a, b) = ((i / 3 + 1) as f64, (i % 3 + 1) as f64);
            s += ci * (a * PI * x[0]).sin() * (b * PI * x[1]).sin();
        }
        s
    };
    let mut v = project_cr_scalar(mesh, f, true);
    let noise = 0.05 * c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for &s in mesh.interior_faces() {
        v.values[s] += noise * rng.random_range(-1.0..1.0);
    }
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct PoincareRow {
    pub n: usize,
    pub h: f64,
    pub max_ratio: f64,
    /// Ratio to the previous row's maximum; NaN on the first row.
    pub growth: f64,
}

pub fn poincare_study(sizes: &[usize], samples: usize, seed: u64) -> Result<Vec<PoincareRow>> {
    let mut rows: Vec<PoincareRow> = Vec::new();
    for &n in sizes {
        let m = SimplicialMesh::unit_square(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut max_ratio = 0.0f64;
        for _ in 0..samples {
            let v = random_v0h_field(&mut rng, &m);
            let g = cr_grad_l2_norm(&m, &v);
            if g > 0.0 {
                max_ratio = max_ratio.max(cr_l2_norm(&m, &v) / g);
            }
        }
        let growth = rows.last().map_or(f64::NAN, |p| max_ratio / p.max_ratio);
        rows.push(PoincareRow { n, h: m.h, max_ratio, growth });
    }
    Ok(rows)
}

/// Largest `h^{1/2} ‖r‖_{L²(σ)} / ‖r‖_{L²(K)}` over faces of all cells, for a
/// cell field `r` (constant per cell, so the ratio is geometric).
pub fn trace_constant(mesh: &SimplicialMesh) -> f64 {
    let mut c = 0.0f64;
    for e in &mesh.elements {
        for &f in &e.faces {
            let face_norm = integrate_face(mesh, f, |_| 1.0).sqrt();
            c = c.max(mesh.h.sqrt() * face_norm / e.volume.sqrt());
        }
    }
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct RatesReport {
    pub seed: u64,
    pub projection: ProjectionRates,
    pub poincare: Vec<PoincareRow>,
    pub trace: Vec<(usize, f64)>,
    pub failures: Vec<String>,
    pub pass: bool,
}

pub const PROJECTION_SIZES: [usize; 5] = [4, 8, 16, 32, 64];
pub const POINCARE_SIZES: [usize; 4] = [4, 8, 16, 32];
pub const POINCARE_SAMPLES: usize = 100;

pub fn rates_report(seed: u64) -> Result<RatesReport> {
    let projection = projection_rates(&PROJECTION_SIZES)?;
    let poincare = poincare_study(&POINCARE_SIZES, POINCARE_SAMPLES, seed)?;
    let mut trace = Vec::new();
    for n in POINCARE_SIZES {
        trace.push((n, trace_constant(&SimplicialMesh::unit_square(n)?)));
    }
    let mut failures = projection.failures();
    for r in &poincare[1..] {
        if !(r.growth <= POINCARE_GROWTH) {
            failures.push(format!("Poincaré ratio grew by {:.4} at n = {}", r.growth, r.n));
        }
    }
    let t0 = trace[0].1;
    for &(n, t) in &trace[1..] {
        if t > t0 * (1.0 + 1e-12) {
            failures.push(format!("trace constant {t} at n = {n} exceeds the coarsest {t0}"));
        }
    }
    let pass = failures.is_empty();
    Ok(RatesReport { seed, projection, poincare, trace, failures, pass })
}
