//! Refinement studies: weak-form consistency defects against a fixed smooth
//! test function, and distances between consecutive levels after
//! conservative coarsening.
//!
//! Fields are piecewise constant in time on `((k-1)Δt, kΔt]`, so the time
//! integrals of the test function are taken exactly slab by slab.

use std::f64::consts::PI;
use std::path::Path;

use fefv_core::mesh::Point;
use fefv_core::quadrature::integrate_element;
use fefv_core::scheme::{pressure, run, SchemeParams, State};
use fefv_core::spaces::Vector2;
use fefv_core::SimplicialMesh;

use crate::config::Experiment;
use crate::{io_error, HarnessError, Result};

/// Time factor `cos(πt / 2T)`, vanishing at the final time.
struct TimeFactor {
    t_final: f64,
}

impl TimeFactor {
    fn at(&self, t: f64) -> f64 {
        (PI * t / (2.0 * self.t_final)).cos()
    }

    fn integral(&self, t0: f64, t1: f64) -> f64 {
        let c = PI / (2.0 * self.t_final);
        ((c * t1).sin() - (c * t0).sin()) / c
    }
}

/// Compactly supported weight `(x(1-x)y(1-y))² (1+x)(1+y)`; the affine
/// factor breaks the reflection symmetries of the preset data, under which
/// a symmetric weight would test to zero.
fn bump(x: Point) -> f64 {
    let b = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
    b * b * (1.0 + x[0]) * (1.0 + x[1])
}

fn grad_bump(x: Point) -> Vector2 {
    let b = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
    let (lx, ly) = (1.0 + x[0], 1.0 + x[1]);
    [
        2.0 * b * (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]) * lx * ly + b * b * ly,
        2.0 * b * x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1]) * lx * ly + b * b * lx,
    ]
}

/// Defect sums for the scalar test function `g(t)(1 + xy)`, its spatially
/// constant control `g(t)`, and the vector field `g(t) b(x) (1, 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Defects {
    pub rho: f64,
    pub z: f64,
    pub rho_control: f64,
    pub z_control: f64,
    /// Entropy `ρ ln θ` tested like the density.
    pub entropy: f64,
    pub momentum: f64,
}

struct DefectAccumulator<'m> {
    mesh: &'m SimplicialMesh,
    params: SchemeParams,
    time: TimeFactor,
    psi_int: Vec<f64>,
    grad_psi_int: Vec<Vector2>,
    bump_int: Vec<f64>,
    grad_bump_int: Vec<Vector2>,
    d: Defects,
}

impl<'m> DefectAccumulator<'m> {
    fn new(mesh: &'m SimplicialMesh, params: &SchemeParams, initial: &State) -> Self {
        let n = mesh.n_elements();
        let psi_int = (0..n).map(|k| integrate_element(mesh, k, |x| 1.0 + x[0] * x[1])).collect();
        let grad_psi_int = mesh.elements.iter().map(|e| [e.volume * e.barycenter[1], e.volume * e.barycenter[0]]).collect();
        let bump_int = (0..n).map(|k| integrate_element(mesh, k, bump)).collect();
        let grad_bump_int = (0..n)
            .map(|k| [integrate_element(mesh, k, |x| grad_bump(x)[0]), integrate_element(mesh, k, |x| grad_bump(x)[1])])
            .collect();
        let mut acc = DefectAccumulator {
            mesh,
            params: params.clone(),
            time: TimeFactor { t_final: params.t_final },
            psi_int,
            grad_psi_int,
            bump_int,
            grad_bump_int,
            d: Defects::default(),
        };
        acc.add_level(initial, 0.0, 1.0, 0.0);
        acc
    }

    /// Adds `dg ∫ f ψ + gi ∫ f ū·∇ψ` terms of one level; the initial level
    /// enters with `dg = g(0)`, `gi = 0`.
    fn add_level(&mut self, s: &State, _t: f64, dg: f64, gi: f64) {
        let mesh = self.mesh;
        let ubar = s.u_bar(mesh);
        let (p, _) = pressure(&s.z, &self.params).expect("Z stays positive");
        let (mu, nu) = (self.params.mu, self.params.nu());
        for k in 0..mesh.n_elements() {
            let vol = mesh.elements[k].volume;
            let (r, z) = (s.rho.values[k], s.z.values[k]);
            let ent = r * s.theta.values[k].ln();
            let u = ubar[k];
            let gp = self.grad_psi_int[k];
            let flux = u[0] * gp[0] + u[1] * gp[1];
            self.d.rho += dg * r * self.psi_int[k] + gi * r * flux;
            self.d.z += dg * z * self.psi_int[k] + gi * z * flux;
            self.d.entropy += dg * ent * self.psi_int[k] + gi * ent * flux;
            self.d.rho_control += dg * r * vol;
            self.d.z_control += dg * z * vol;

            // vector test function b(x)(1, 1)
            let gb = self.grad_bump_int[k];
            let ue = u[0] + u[1];
            let g = s.u.gradient_on(mesh, k);
            let div = g[0][0] + g[1][1];
            let e_gb = gb[0] + gb[1];
            let visc = (0..2).map(|i| g[i][0] * gb[0] + g[i][1] * gb[1]).sum::<f64>();
            self.d.momentum += dg * r * ue * self.bump_int[k]
                + gi * (r * ue * (u[0] * gb[0] + u[1] * gb[1]) + p.values[k] * e_gb - mu * visc - nu * div * e_gb);
        }
    }

    fn step(&mut self, next: &State) {
        let dt = self.params.dt;
        let (t0, t1) = ((next.k - 1) as f64 * dt, next.k as f64 * dt);
        let dg = self.time.at(t1) - self.time.at(t0);
        let gi = self.time.integral(t0, t1);
        self.add_level(next, t1, dg, gi);
    }
}

/// Volume-weighted average of fine cell values on the coarse cells that
/// contain them. Both meshes must be structured and nested.
pub fn coarsen<T: Copy + Default + std::ops::AddAssign + std::ops::Mul<f64, Output = T>>(
    fine: &SimplicialMesh,
    coarse: &SimplicialMesh,
    values: &[T],
) -> Result<Vec<T>> {
    let mut out = vec![T::default(); coarse.n_elements()];
    let mut covered = vec![0.0; coarse.n_elements()];
    for (k, e) in fine.elements.iter().enumerate() {
        let c = coarse
            .locate(e.barycenter)
            .ok_or_else(|| HarnessError::Usage(format!("fine element {k} lies outside the coarse mesh")))?;
        out[c] += values[k] * e.volume;
        covered[c] += e.volume;
    }
    for (c, e) in coarse.elements.iter().enumerate() {
        if (covered[c] - e.volume).abs() > 1e-12 * e.volume {
            return Err(HarnessError::Usage(format!("meshes are not nested at coarse element {c}")));
        }
        out[c] = out[c] * (1.0 / e.volume);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub dt: f64,
    pub steps: usize,
    pub defects: Defects,
    /// `L²` distance to the previous (coarser) level of `ρ`, `ρθ`, `ū`;
    /// NaN on the first level.
    pub dist_rho: f64,
    pub dist_z: f64,
    pub dist_u_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

fn eoc(a: f64, b: f64, ha: f64, hb: f64) -> f64 {
    (a.abs() / b.abs()).ln() / (ha / hb).ln()
}

impl ConvergenceTable {
    /// Observed orders of `|D_ρ|` and `|D_Z|` between consecutive rows.
    pub fn defect_eoc(&self) -> Vec<(f64, f64)> {
        self.rows
            .windows(2)
            .map(|w| (eoc(w[0].defects.rho, w[1].defects.rho, w[0].h, w[1].h), eoc(w[0].defects.z, w[1].defects.z, w[0].h, w[1].h)))
            .collect()
    }

    /// Ratios of consecutive Cauchy distances `(ρ, Z, ū)`.
    pub fn distance_ratios(&self) -> Vec<[f64; 3]> {
        self.rows[1..]
            .windows(2)
            .map(|w| [w[1].dist_rho / w[0].dist_rho, w[1].dist_z / w[0].dist_z, w[1].dist_u_bar / w[0].dist_u_bar])
            .collect()
    }

    pub const HEADER: [&'static str; 19] = [
        "level", "nx", "ny", "h", "dt", "steps", "D_rho", "D_Z", "D_rho_control", "D_Z_control", "D_entropy",
        "D_momentum", "eoc_D_rho", "eoc_D_Z", "dist_rho", "dist_Z", "dist_u_bar", "ratio_dist_rho", "ratio_dist_Z",
    ];

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| HarnessError::Csv { path: path.into(), source };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<&str> = Self::HEADER.to_vec();
        header.push("ratio_dist_u_bar");
        w.write_record(&header).map_err(csv_err)?;
        let f = |x: f64| format!("{x:.17e}");
        let eocs = self.defect_eoc();
        for (i, r) in self.rows.iter().enumerate() {
            let (er, ez) = if i == 0 { (f64::NAN, f64::NAN) } else { eocs[i - 1] };
            let ratio = if i >= 2 { self.distance_ratios()[i - 2] } else { [f64::NAN; 3] };
            let d = &r.defects;
            let rec = vec![
                r.level.to_string(), r.nx.to_string(), r.ny.to_string(), f(r.h), f(r.dt), r.steps.to_string(),
                f(d.rho), f(d.z), f(d.rho_control), f(d.z_control), f(d.entropy), f(d.momentum), f(er), f(ez),
                f(r.dist_rho), f(r.dist_z), f(r.dist_u_bar), f(ratio[0]), f(ratio[1]), f(ratio[2]),
            ];
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(io_error(path))
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:>5} {:>5} {:>10} {:>10} {:>6} {:>11} {:>11} {:>11} {:>11} {:>7} {:>7} {:>11} {:>11} {:>11}\n",
            "level", "nx", "h", "dt", "steps", "D_rho", "D_Z", "D_entropy", "control", "eoc_r", "eoc_Z", "dist_rho", "dist_Z", "dist_u"
        );
        let eocs = self.defect_eoc();
        for (i, r) in self.rows.iter().enumerate() {
            let (er, ez) = if i == 0 { (f64::NAN, f64::NAN) } else { eocs[i - 1] };
            let d = &r.defects;
            s += &format!(
                "{:>5} {:>5} {:>10.4e} {:>10.4e} {:>6} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.2e} {:>7.3} {:>7.3} {:>11.4e} {:>11.4e} {:>11.4e}\n",
                r.level, r.nx, r.h, r.dt, r.steps, d.rho, d.z, d.entropy, d.rho_control.abs().max(d.z_control.abs()),
                er, ez, r.dist_rho, r.dist_z, r.dist_u_bar
            );
        }
        s
    }
}

fn l2_distance<T: Copy>(mesh: &SimplicialMesh, a: &[T], b: &[T], sq: impl Fn(T, T) -> f64) -> f64 {
    mesh.elements.iter().enumerate().map(|(k, e)| e.volume * sq(a[k], b[k])).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Default)]
struct V2([f64; 2]);

impl std::ops::AddAssign for V2 {
    fn add_assign(&mut self, o: V2) {
        self.0[0] += o.0[0];
        self.0[1] += o.0[1];
    }
}

impl std::ops::Mul<f64> for V2 {
    type Output = V2;
    fn mul(self, s: f64) -> V2 {
        V2([self.0[0] * s, self.0[1] * s])
    }
}

/// Runs `levels` refinements of `exp` (mesh `nx·2^l`, `Δt = c_dt h`, fixed
/// final time), with `progress` called after each level.
pub fn convergence_study(exp: &Experiment, levels: usize, mut progress: impl FnMut(&ConvergenceRow)) -> Result<ConvergenceTable> {
    if levels < 3 {
        return Err(HarnessError::Usage("a convergence study needs at least 3 levels".into()));
    }
    let Some(c_dt) = exp.c_dt else {
        return Err(HarnessError::Usage("a convergence study needs params.c_dt (Δt = c_dt h), not a fixed dt".into()));
    };
    let steps0 = exp.params.steps()?;
    let t_final = exp.params.t_final;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut previous: Option<(SimplicialMesh, State)> = None;
    for level in 0..levels {
        let scale = 1usize << level;
        let (nx, ny) = (exp.nx * scale, exp.ny * scale);
        let wrap = |e: HarnessError| HarnessError::Level { level, n: nx, source: Box::new(e) };
        let mesh = SimplicialMesh::structured(nx, ny, exp.domain).map_err(|e| wrap(e.into()))?;
        let steps = steps0 * scale;
        let mut params = exp.params.clone();
        params.dt = c_dt * mesh.h;
        params.t_final = t_final;
        // the step count must be an exact multiple, so the final times agree
        if params.steps().map_err(|e| wrap(e.into()))? != steps {
            return Err(wrap(HarnessError::Usage(format!("T/dt at level {level} is not {steps}"))));
        }
        let initial = exp.preset.initial_state(&mesh, &exp.domain, exp.theta_bounds).map_err(wrap)?;
        let mut acc = DefectAccumulator::new(&mesh, &params, &initial);
        let last = run(&mesh, initial, &params, &exp.settings, |r| {
            acc.step(r.next);
            Ok(())
        })
        .map_err(|e| wrap(e.into()))?;
        let (dist_rho, dist_z, dist_u_bar) = match &previous {
            None => (f64::NAN, f64::NAN, f64::NAN),
            Some((cm, cs)) => {
                let rho = coarsen(&mesh, cm, &last.rho.values).map_err(wrap)?;
                let z = coarsen(&mesh, cm, &last.z.values).map_err(wrap)?;
                let ub: Vec<V2> = last.u_bar(&mesh).into_iter().map(V2).collect();
                let ub = coarsen(&mesh, cm, &ub).map_err(wrap)?;
                let cub: Vec<V2> = cs.u_bar(cm).into_iter().map(V2).collect();
                (
                    l2_distance(cm, &rho, &cs.rho.values, |a, b| (a - b).powi(2)),
                    l2_distance(cm, &z, &cs.z.values, |a, b| (a - b).powi(2)),
                    l2_distance(cm, &ub, &cub, |a, b| (a.0[0] - b.0[0]).powi(2) + (a.0[1] - b.0[1]).powi(2)),
                )
            }
        };
        let row = ConvergenceRow {
            level,
            nx,
            ny,
            h: mesh.h,
            dt: params.dt,
            steps,
            defects: acc.d,
            dist_rho,
            dist_z,
            dist_u_bar,
        };
        progress(&row);
        rows.push(row);
        previous = Some((mesh, last));
    }
    Ok(ConvergenceTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_factor_integrates_exactly() {
        let g = TimeFactor { t_final: 2.0 };
        assert!(g.at(2.0).abs() < 1e-16);
        // ∫_0^T cos(πt/2T) = 2T/π
        assert!((g.integral(0.0, 2.0) - 4.0 / PI).abs() < 1e-15);
        let parts: f64 = (0..8).map(|i| g.integral(i as f64 * 0.25, (i + 1) as f64 * 0.25)).sum();
        assert!((parts - 4.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn coarsening_preserves_integrals() {
        let coarse = SimplicialMesh::unit_square(3).unwrap();
        let fine = SimplicialMesh::unit_square(6).unwrap();
        let v: Vec<f64> = (0..fine.n_elements()).map(|k| 1.0 + (k as f64 * 0.37).sin()).collect();
        let c = coarsen(&fine, &coarse, &v).unwrap();
        let a: f64 = v.iter().zip(&fine.elements).map(|(v, e)| v * e.volume).sum();
        let b: f64 = c.iter().zip(&coarse.elements).map(|(v, e)| v * e.volume).sum();
        assert!((a - b).abs() < 1e-15);
        let odd = SimplicialMesh::unit_square(5).unwrap();
        assert!(coarsen(&odd, &coarse, &vec![1.0; odd.n_elements()]).is_err());
    }

    #[test]
    fn bump_gradient_matches_difference_quotient() {
        let x = [0.3, 0.65];
        let e = 1e-6;
        let g = grad_bump(x);
        let fx = (bump([x[0] + e, x[1]]) - bump([x[0] - e, x[1]])) / (2.0 * e);
        let fy = (bump([x[0], x[1] + e]) - bump([x[0], x[1] - e])) / (2.0 * e);
        assert!((g[0] - fx).abs() < 1e-9 && (g[1] - fy).abs() < 1e-9);
    }
}
