//! Discrete energy, entropy, renormalization and conservation checks.
//!
//! Everything here is a pure function of converged time levels. Face sums run
//! over interior faces with `q = ⟨u·n_σ⟩` of the new velocity; jumps are
//! `out - in`.

use crate::mesh::{Point, SimplicialMesh};
use crate::scheme::{SchemeParams, State};
use crate::spaces::{cell_average, project_cell, project_cr_vector, CellField, Vector2};
use crate::upwind::upwind_plain;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub kinetic: f64,
    pub internal: f64,
    pub artificial: f64,
    pub total: f64,
    /// `∫ μ|∇_h u|² + ν|div_h u|²`.
    pub viscous_dissipation: f64,
}

pub fn total_energy(mesh: &SimplicialMesh, state: &State, params: &SchemeParams) -> EnergyReport {
    let hd = params.h_delta(mesh.h);
    let ubar = cell_average(mesh, &state.u);
    let (mut kinetic, mut internal, mut artificial, mut viscous) = (0.0, 0.0, 0.0, 0.0);
    let nu = params.nu();
    for (k, e) in mesh.elements.iter().enumerate() {
        let (r, z) = (state.rho.values[k], state.z.values[k]);
        kinetic += e.volume * 0.5 * r * (ubar[k][0].powi(2) + ubar[k][1].powi(2));
        internal += e.volume * params.pressure_potential(z);
        artificial += e.volume * hd * (r * r + z * z);
        let g = state.u.gradient_on(mesh, k);
        let div = g[0][0] + g[1][1];
        viscous += e.volume * (params.mu * g.iter().flatten().map(|x| x * x).sum::<f64>() + nu * div * div);
    }
    EnergyReport { kinetic, internal, artificial, total: kinetic + internal + artificial, viscous_dissipation: viscous }
}

/// One labelled right-hand-side term of the energy balance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationTerm {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBalance {
    pub prev: EnergyReport,
    pub next: EnergyReport,
    /// `D_t E + viscous dissipation`.
    pub lhs: f64,
    /// The nonpositive right-hand-side terms (only for `γ = 2`, where they
    /// are exact).
    pub terms: Vec<DissipationTerm>,
    /// `Δt |lhs - Σ terms| / E_prev` when the exact identity is available.
    pub residual: Option<f64>,
    /// `-Δt lhs`, nonnegative up to solver tolerance for any `γ`.
    pub margin: f64,
}

struct FaceData {
    len: f64,
    q: f64,
    i: usize,
    o: usize,
}

fn interior(mesh: &SimplicialMesh, state: &State) -> Vec<FaceData> {
    mesh.interior_faces()
        .iter()
        .map(|&f| {
            let face = &mesh.faces[f];
            FaceData {
                len: face.measure,
                q: state.u.normal_flux(mesh, f),
                i: face.in_element,
                o: face.out_element.unwrap(),
            }
        })
        .collect()
}

fn check_converged(nl_residual: f64, tol_nl: f64) -> Result<()> {
    if nl_residual <= tol_nl {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "step residual {nl_residual:e} above tolerance {tol_nl:e}; balance only holds for converged steps"
        )))
    }
}

/// Energy balance of one converged step. Pass the step's nonlinear residual
/// and tolerance; unconverged input is rejected.
pub fn energy_balance(
    mesh: &SimplicialMesh,
    prev: &State,
    next: &State,
    params: &SchemeParams,
    nl_residual: f64,
    tol_nl: f64,
) -> Result<EnergyBalance> {
    check_converged(nl_residual, tol_nl)?;
    let dt = params.dt;
    let e0 = total_energy(mesh, prev, params);
    let e1 = total_energy(mesh, next, params);
    let lhs = (e1.total - e0.total) / dt + e1.viscous_dissipation;
    let margin = -dt * lhs;
    if params.gamma != 2.0 {
        return Ok(EnergyBalance { prev: e0, next: e1, lhs, terms: Vec::new(), residual: None, margin });
    }
    let a = params.a;
    let he = params.h_eps(mesh.h);
    let hd = params.h_delta(mesh.h);
    let (r0, r1) = (&prev.rho.values, &next.rho.values);
    let (z0, z1) = (&prev.z.values, &next.z.values);
    let ub0 = cell_average(mesh, &prev.u);
    let ub1 = cell_average(mesh, &next.u);

    let mut t = [0.0f64; 10];
    for (k, e) in mesh.elements.iter().enumerate() {
        let dz = z1[k] - z0[k];
        let dr = r1[k] - r0[k];
        let du = [ub1[k][0] - ub0[k][0], ub1[k][1] - ub0[k][1]];
        t[0] -= e.volume * a * dz * dz / dt;
        t[3] -= e.volume * 0.5 * r0[k] * (du[0] * du[0] + du[1] * du[1]) / dt;
        t[6] -= e.volume * hd * dr * dr / dt;
        t[8] -= e.volume * hd * dz * dz / dt;
    }
    for f in interior(mesh, next) {
        let jz = z1[f.o] - z1[f.i];
        let jr = r1[f.o] - r1[f.i];
        let ju = [ub1[f.o][0] - ub1[f.i][0], ub1[f.o][1] - ub1[f.i][1]];
        let ju2 = ju[0] * ju[0] + ju[1] * ju[1];
        // P'(z) = 2 a z, P'' = 2a
        t[1] -= 0.5 * he * f.len * jz * (2.0 * a * jz);
        t[2] -= f.len * a * f.q.abs() * jz * jz;
        t[4] -= 0.5 * he * f.len * 0.5 * (r1[f.i] + r1[f.o]) * ju2;
        t[5] -= 0.5 * f.len * (r1[f.i] * f.q.max(0.0) - r1[f.o] * f.q.min(0.0)) * ju2;
        t[7] -= hd * f.len * (he + f.q.abs()) * jr * jr;
        t[9] -= hd * f.len * (he + f.q.abs()) * jz * jz;
    }
    const NAMES: [&str; 10] = [
        "pressure_time_remainder",
        "pressure_jump_penalty",
        "pressure_upwind",
        "velocity_time_increment",
        "velocity_jump_penalty",
        "velocity_upwind",
        "artificial_rho_time",
        "artificial_rho_jumps",
        "artificial_z_time",
        "artificial_z_jumps",
    ];
    let terms: Vec<DissipationTerm> =
        NAMES.iter().zip(t).map(|(&name, value)| DissipationTerm { name, value }).collect();
    let rhs: f64 = t.iter().sum();
    let residual = dt * (lhs - rhs).abs() / e0.total;
    Ok(EnergyBalance { prev: e0, next: e1, lhs, terms, residual: Some(residual), margin })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Renormalized {
    Rho,
    Z,
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenormalizationCheck {
    /// Time derivative plus transport part.
    pub lhs: f64,
    /// Minus the sum of the remainder terms.
    pub rhs: f64,
    pub residual: f64,
}

/// Remainder terms of the squared renormalization of `ρ` or `Z`:
/// `∫(Δr)²/Δt + h^ε Σ|σ|[[r]]² + Σ|σ||q|[[r]]²`.
pub fn square_remainders(mesh: &SimplicialMesh, old: &[f64], new: &[f64], next: &State, params: &SchemeParams) -> f64 {
    let dt = params.dt;
    let he = params.h_eps(mesh.h);
    let mut s: f64 = mesh.elements.iter().enumerate().map(|(k, e)| e.volume * (new[k] - old[k]).powi(2) / dt).sum();
    for f in interior(mesh, next) {
        let j = new[f.o] - new[f.i];
        s += f.len * (he + f.q.abs()) * j * j;
    }
    s
}

/// Renormalized equation with `b(z) = z²` for `ρ`, `Z`, or `ρ b(θ)` tested
/// with the constant one. Returns both sides and their difference.
pub fn renormalization_residual(
    mesh: &SimplicialMesh,
    prev: &State,
    next: &State,
    params: &SchemeParams,
    variable: Renormalized,
) -> RenormalizationCheck {
    let dt = params.dt;
    let he = params.h_eps(mesh.h);
    match variable {
        Renormalized::Rho | Renormalized::Z => {
            let (old, new) = match variable {
                Renormalized::Rho => (&prev.rho.values, &next.rho.values),
                _ => (&prev.z.values, &next.z.values),
            };
            let mut lhs = 0.0;
            for (k, e) in mesh.elements.iter().enumerate() {
                let div = next.u.divergence_on(mesh, k);
                lhs += e.volume * ((new[k].powi(2) - old[k].powi(2)) / dt + new[k].powi(2) * div);
            }
            let rhs = -square_remainders(mesh, old, new, next, params);
            RenormalizationCheck { lhs, rhs, residual: (lhs - rhs).abs() }
        }
        Renormalized::Theta => {
            let (r0, r1) = (&prev.rho.values, &next.rho.values);
            let (t0, t1) = (&prev.theta.values, &next.theta.values);
            let z1 = &next.z.values;
            let lhs: f64 = mesh
                .elements
                .iter()
                .enumerate()
                .map(|(k, e)| e.volume * (r1[k] * t1[k] * t1[k] - r0[k] * t0[k] * t0[k]) / dt)
                .sum();
            let mut rem: f64 = mesh
                .elements
                .iter()
                .enumerate()
                .map(|(k, e)| e.volume * r0[k] * (t1[k] - t0[k]).powi(2) / dt)
                .sum();
            for f in interior(mesh, next) {
                let jt = t1[f.o] - t1[f.i];
                rem += 0.5 * he * f.len * (z1[f.o] - z1[f.i]) * (2.0 * jt);
                rem += f.len * (r1[f.i] * f.q.max(0.0) - r1[f.o] * f.q.min(0.0)) * jt * jt;
                rem += 0.5 * he * f.len * (r1[f.o] - r1[f.i]) * (t1[f.i].powi(2) - t1[f.o].powi(2));
            }
            RenormalizationCheck { lhs, rhs: -rem, residual: (lhs + rem).abs() }
        }
    }
}

/// Right-hand side of the discrete entropy inequality with `χ = ln` for a
/// nonnegative cell test function; nonnegative for exact solutions.
pub fn entropy_margin(
    mesh: &SimplicialMesh,
    prev: &State,
    next: &State,
    params: &SchemeParams,
    psi: &[f64],
) -> Result<f64> {
    if let Some(k) = psi.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput(format!("test function is negative ({}) in element {k}", psi[k])));
    }
    let dt = params.dt;
    let he = params.h_eps(mesh.h);
    let (r0, r1) = (&prev.rho.values, &next.rho.values);
    let (t0, t1) = (&prev.theta.values, &next.theta.values);
    let z1 = &next.z.values;
    let s1: Vec<f64> = r1.iter().zip(t1).map(|(r, t)| r * t.ln()).collect();
    let mut m: f64 = mesh
        .elements
        .iter()
        .enumerate()
        .map(|(k, e)| e.volume * (s1[k] - r0[k] * t0[k].ln()) / dt * psi[k])
        .sum();
    for f in interior(mesh, next) {
        let jpsi = psi[f.o] - psi[f.i];
        m -= f.len * upwind_plain(s1[f.i], s1[f.o], f.q) * jpsi;
        m += 0.5 * he * f.len * (z1[f.o] - z1[f.i]) * (psi[f.o] / t1[f.o] - psi[f.i] / t1[f.i]);
        m += 0.5 * he * f.len * (r1[f.o] - r1[f.i]) * ((t1[f.o].ln() - 1.0) * psi[f.o] - (t1[f.i].ln() - 1.0) * psi[f.i]);
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationReport {
    pub mass_drift: f64,
    pub z_drift: f64,
    pub min_rho: f64,
    pub min_theta: f64,
    pub max_theta: f64,
}

/// Tracks the conserved totals and extreme values over a sequence of levels.
#[derive(Debug, Clone)]
pub struct ConservationTracker {
    mass0: f64,
    z0: f64,
    report: ConservationReport,
}

impl ConservationTracker {
    pub fn new(mesh: &SimplicialMesh, initial: &State) -> Self {
        ConservationTracker {
            mass0: initial.rho.integral(mesh),
            z0: initial.z.integral(mesh),
            report: ConservationReport {
                mass_drift: 0.0,
                z_drift: 0.0,
                min_rho: initial.rho.min(),
                min_theta: initial.theta.min(),
                max_theta: initial.theta.max(),
            },
        }
    }

    pub fn observe(&mut self, mesh: &SimplicialMesh, s: &State) {
        let r = &mut self.report;
        r.mass_drift = r.mass_drift.max((s.rho.integral(mesh) - self.mass0).abs() / self.mass0.abs());
        r.z_drift = r.z_drift.max((s.z.integral(mesh) - self.z0).abs() / self.z0.abs());
        r.min_rho = r.min_rho.min(s.rho.min());
        r.min_theta = r.min_theta.min(s.theta.min());
        r.max_theta = r.max_theta.max(s.theta.max());
    }

    pub fn report(&self) -> ConservationReport {
        self.report
    }
}

pub fn conservation_and_bounds(mesh: &SimplicialMesh, series: &[State]) -> ConservationReport {
    let mut t = ConservationTracker::new(mesh, &series[0]);
    for s in &series[1..] {
        t.observe(mesh, s);
    }
    t.report()
}

/// Uniform-in-time norms and time-integrated dissipation of the stability
/// estimates, accumulated step by step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StabilityMonitor {
    pub kinetic_l1: f64,
    pub rho_lgamma: f64,
    pub momentum_l2g: f64,
    pub z_lgamma: f64,
    pub rho_artificial_l2: f64,
    pub z_artificial_l2: f64,
    pub grad_u_l2_sq: f64,
    pub div_u_l2_sq: f64,
    pub rho_jumps: f64,
    pub z_jumps: f64,
    pub velocity_jump_penalty: f64,
    pub velocity_upwind: f64,
}

impl StabilityMonitor {
    fn sup_norms(&mut self, mesh: &SimplicialMesh, s: &State, params: &SchemeParams) {
        let g = params.gamma;
        let q = 2.0 * g / (g + 1.0);
        let hd2 = params.h_delta(mesh.h).sqrt();
        let ubar = cell_average(mesh, &s.u);
        let (mut kin, mut mom) = (0.0, 0.0);
        for (k, e) in mesh.elements.iter().enumerate() {
            let r = s.rho.values[k];
            let u2 = ubar[k][0].powi(2) + ubar[k][1].powi(2);
            kin += e.volume * r * u2;
            mom += e.volume * (r * u2.sqrt()).powf(q);
        }
        self.kinetic_l1 = self.kinetic_l1.max(kin);
        self.momentum_l2g = self.momentum_l2g.max(mom.powf(1.0 / q));
        self.rho_lgamma = self.rho_lgamma.max(s.rho.lp_norm(mesh, g));
        self.z_lgamma = self.z_lgamma.max(s.z.lp_norm(mesh, g));
        self.rho_artificial_l2 = self.rho_artificial_l2.max(hd2 * s.rho.lp_norm(mesh, 2.0));
        self.z_artificial_l2 = self.z_artificial_l2.max(hd2 * s.z.lp_norm(mesh, 2.0));
    }

    pub fn start(mesh: &SimplicialMesh, initial: &State, params: &SchemeParams) -> Self {
        let mut m = StabilityMonitor::default();
        m.sup_norms(mesh, initial, params);
        m
    }

    pub fn observe(&mut self, mesh: &SimplicialMesh, next: &State, params: &SchemeParams) {
        self.sup_norms(mesh, next, params);
        let dt = params.dt;
        let he = params.h_eps(mesh.h);
        let hd = params.h_delta(mesh.h);
        for k in 0..mesh.n_elements() {
            let g = next.u.gradient_on(mesh, k);
            let vol = mesh.elements[k].volume;
            self.grad_u_l2_sq += dt * vol * g.iter().flatten().map(|x| x * x).sum::<f64>();
            self.div_u_l2_sq += dt * vol * (g[0][0] + g[1][1]).powi(2);
        }
        let ubar = cell_average(mesh, &next.u);
        let (r, z) = (&next.rho.values, &next.z.values);
        for f in interior(mesh, next) {
            let w = he.max(f.q.abs());
            self.rho_jumps += dt * hd * f.len * w * (r[f.o] - r[f.i]).powi(2);
            self.z_jumps += dt * hd * f.len * w * (z[f.o] - z[f.i]).powi(2);
            let ju2 = (ubar[f.o][0] - ubar[f.i][0]).powi(2) + (ubar[f.o][1] - ubar[f.i][1]).powi(2);
            self.velocity_jump_penalty += dt * 0.5 * he * f.len * 0.5 * (r[f.i] + r[f.o]) * ju2;
            self.velocity_upwind += dt * 0.5 * f.len * (r[f.i] * f.q.max(0.0) - r[f.o] * f.q.min(0.0)) * ju2;
        }
    }

    pub fn values(&self) -> [(&'static str, f64); 12] {
        [
            ("kinetic_l1", self.kinetic_l1),
            ("rho_lgamma", self.rho_lgamma),
            ("momentum_l2g", self.momentum_l2g),
            ("z_lgamma", self.z_lgamma),
            ("rho_artificial_l2", self.rho_artificial_l2),
            ("z_artificial_l2", self.z_artificial_l2),
            ("grad_u_l2_sq", self.grad_u_l2_sq),
            ("div_u_l2_sq", self.div_u_l2_sq),
            ("rho_jumps", self.rho_jumps),
            ("z_jumps", self.z_jumps),
            ("velocity_jump_penalty", self.velocity_jump_penalty),
            ("velocity_upwind", self.velocity_upwind),
        ]
    }
}

/// Smooth reference state for the relative energy.
pub struct Reference<'a> {
    pub rho: &'a dyn Fn(Point) -> f64,
    pub theta: &'a dyn Fn(Point) -> f64,
    pub u: &'a dyn Fn(Point) -> Vector2,
}

/// `P(ρ, S)` with `S = ρ ln((a θ^γ)^{1/(γ-1)})`, together with its partials.
fn entropy_potential(rho: f64, theta: f64, p: &SchemeParams) -> (f64, f64, f64, f64) {
    let g = p.gamma;
    let s = rho / (g - 1.0) * (p.a.ln() + g * theta.ln());
    let pressure = p.a * (rho * theta).powf(g);
    let pot = pressure / (g - 1.0);
    let d_rho = pressure / (g - 1.0) * (g / rho - (g - 1.0) * s / (rho * rho));
    let d_s = pressure / rho;
    (s, pot, d_rho, d_s)
}

/// Relative energy of `state` with respect to the cell projections of a
/// smooth reference, summed over cells.
pub fn relative_energy(mesh: &SimplicialMesh, state: &State, reference: &Reference, params: &SchemeParams) -> Result<f64> {
    let rr = project_cell(mesh, reference.rho);
    let tr = project_cell(mesh, reference.theta);
    if rr.min() <= 0.0 || tr.min() <= 0.0 {
        return Err(Error::InvalidInput("reference density and temperature must be positive".into()));
    }
    let ur = cell_average(mesh, &project_cr_vector(mesh, reference.u, false));
    let ub = cell_average(mesh, &state.u);
    relative_energy_cells(mesh, state, &rr, &tr, &ur, &ub, params)
}

fn relative_energy_cells(
    mesh: &SimplicialMesh,
    state: &State,
    rr: &CellField,
    tr: &CellField,
    ur: &[Vector2],
    ub: &[Vector2],
    params: &SchemeParams,
) -> Result<f64> {
    let mut total = 0.0;
    for (k, e) in mesh.elements.iter().enumerate() {
        let (r, t) = (state.rho.values[k], state.theta.values[k]);
        if !(r > 0.0 && t > 0.0) {
            return Err(Error::Positivity(format!("state not positive in element {k}")));
        }
        let (s, pot, _, _) = entropy_potential(r, t, params);
        let (sr, pr, dr, ds) = entropy_potential(rr.values[k], tr.values[k], params);
        let du = [ub[k][0] - ur[k][0], ub[k][1] - ur[k][1]];
        let kin = 0.5 * r * (du[0] * du[0] + du[1] * du[1]);
        let breg = pot - dr * (r - rr.values[k]) - ds * (s - sr) - pr;
        total += e.volume * (kin + breg);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SimplicialMesh;
    use crate::spaces::CrVectorField;

    fn params(gamma: f64) -> SchemeParams {
        SchemeParams { gamma, a: 1.0, mu: 0.1, lambda: 0.0, epsilon: 1.5, delta: 0.25, dt: 0.1, t_final: 1.0 }
    }

    #[test]
    fn rest_energy_closed_form() {
        let m = SimplicialMesh::unit_square(4).unwrap();
        let s = State::rest(&m);
        let p = params(2.0);
        let e = total_energy(&m, &s, &p);
        let expect = 1.0 + 2.0 * m.h.powf(0.25);
        assert!((e.total - expect).abs() < 1e-14);
        assert_eq!(e.kinetic, 0.0);
        let doubled = State::new(0, CellField::constant(&m, 2.0), CellField::constant(&m, 1.0), CrVectorField::zeros(&m, true));
        let e2 = total_energy(&m, &doubled, &p);
        assert!((e2.internal - 4.0 * e.internal).abs() < 1e-14);
    }

    #[test]
    fn rest_step_balance_is_zero() {
        let m = SimplicialMesh::unit_square(3).unwrap();
        let s = State::rest(&m);
        let p = params(2.0);
        let b = energy_balance(&m, &s, &s, &p, 0.0, 1e-10).unwrap();
        assert_eq!(b.residual, Some(0.0));
        assert!(b.terms.iter().all(|t| t.value == 0.0));
        assert!(energy_balance(&m, &s, &s, &p, 1.0, 1e-10).is_err());
        let psi = vec![1.0; m.n_elements()];
        assert_eq!(entropy_margin(&m, &s, &s, &p, &psi).unwrap(), 0.0);
        assert!(entropy_margin(&m, &s, &s, &p, &vec![-1.0; m.n_elements()]).is_err());
        for v in [Renormalized::Rho, Renormalized::Z, Renormalized::Theta] {
            assert_eq!(renormalization_residual(&m, &s, &s, &p, v).residual, 0.0);
        }
    }

    #[test]
    fn relative_energy_of_projection_vanishes() {
        let m = SimplicialMesh::unit_square(6).unwrap();
        let p = params(1.4);
        let rho = |x: Point| 1.0 + 0.3 * x[0] * x[1];
        let theta = |x: Point| 1.2 - 0.1 * x[1];
        let u = |x: Point| [x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]), 0.0];
        let s = crate::scheme::discrete_initial_data(&m, rho, theta, u, (0.5, 2.0)).unwrap();
        let r = Reference { rho: &rho, theta: &theta, u: &u };
        assert!(relative_energy(&m, &s, &r, &p).unwrap().abs() < 1e-12);
    }
}
