//! Backward Euler time stepping of the coupled density / potential
//! temperature / velocity system.
//!
//! A step iterates on the velocity. For a frozen velocity the density and
//! `Z = ρθ` equations are linear with an M-matrix, so they are solved exactly;
//! the velocity is then updated either by a Newton correction of the coupled
//! system (default) or by the plain lagged-velocity momentum solve. Density and
//! `Z` are always the exact transport solutions for the velocity that is
//! finally returned, so mass conservation and positivity never depend on the
//! nonlinear tolerance.
//!
//! If the plain iteration stalls, the convective, pressure and `ν` terms are
//! switched on gradually (`zeta` from `1/N` to 1), warm-starting each stage.

use crate::mesh::SimplicialMesh;
use crate::sparse::{CsrMatrix, DirectSolver, Factorization};
use crate::spaces::{project_cell, project_cr_vector, CellField, CrVectorField, Vector2};
use crate::upwind::{self, upwind_weights};
use crate::{mesh::Point, Error, Result};

/// Values below this are treated as a breakdown rather than clamped.
pub const POSITIVITY_FLOOR: f64 = 1e-300;

/// A reused Jacobian is refreshed once an iteration reduces the residual by
/// less than this factor.
const CHORD_CONTRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams {
    pub gamma: f64,
    pub a: f64,
    pub mu: f64,
    pub lambda: f64,
    /// Exponent of the upwind jump penalty `h^ε`.
    pub epsilon: f64,
    /// Exponent of the artificial pressure `h^δ`.
    pub delta: f64,
    pub dt: f64,
    pub t_final: f64,
}

impl SchemeParams {
    pub const DIM: f64 = 2.0;

    /// Bulk coefficient of the `div u div φ` term.
    pub fn nu(&self) -> f64 {
        (Self::DIM - 2.0) / Self::DIM * self.mu + self.lambda
    }

    /// Every violated constraint, worded for users.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                v.push(msg.to_string());
            }
        };
        check(self.gamma > 1.0, "gamma > 1");
        check(self.a > 0.0, "a > 0");
        check(self.mu > 0.0, "mu > 0");
        check(self.lambda >= -2.0 * self.mu / Self::DIM, "lambda >= -2 mu / d");
        check(self.nu() >= 0.0, "nu = (d-2)/d mu + lambda >= 0");
        check(self.epsilon > 1.0, "epsilon > 1");
        check(self.delta > 0.0 && self.delta < 0.5, "delta ∈ (0, 1/2)");
        check(self.dt > 0.0 && self.dt.is_finite(), "dt > 0");
        check(self.t_final > 0.0 && self.t_final.is_finite(), "T > 0");
        if self.dt > 0.0 && self.t_final > 0.0 && self.steps().is_err() {
            v.push("T / dt must be a positive integer".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(v.join("; ")))
        }
    }

    /// Number of steps `T/Δt`, required to be an integer up to 1e-9 relative.
    pub fn steps(&self) -> Result<usize> {
        let n = self.t_final / self.dt;
        let r = n.round();
        if r >= 1.0 && (n - r).abs() <= 1e-9 * r {
            Ok(r as usize)
        } else {
            Err(Error::InvalidInput(format!("T/dt = {n} is not a positive integer")))
        }
    }

    pub fn h_eps(&self, h: f64) -> f64 {
        h.powf(self.epsilon)
    }

    pub fn h_delta(&self, h: f64) -> f64 {
        h.powf(self.delta)
    }

    /// `p(z) = a z^γ`.
    pub fn pressure(&self, z: f64) -> f64 {
        self.a * z.powf(self.gamma)
    }

    /// Pressure potential `P(z) = a z^γ / (γ-1)`.
    pub fn pressure_potential(&self, z: f64) -> f64 {
        self.a / (self.gamma - 1.0) * z.powf(self.gamma)
    }

    /// Everything that multiplies `div φ` in the momentum equation.
    pub fn total_pressure(&self, rho: f64, z: f64, h: f64) -> f64 {
        self.pressure(z) + self.h_delta(h) * (rho * rho + z * z)
    }
}

/// How the velocity iterate is updated once `ρ` and `Z` are transported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linearization {
    /// Newton correction of the full system, `ρ` and `Z` then re-solved.
    Newton,
    /// Momentum solve with `ρ`, `Z` frozen and the convecting velocity lagged.
    /// Cheap, but it diverges once `Δt` is comparable to the acoustic time
    /// `h / c`, which includes `Δt = h / 2` at moderate viscosity.
    Picard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Absolute bound on the max-norm of the scaled residual.
    pub tol_nl: f64,
    pub max_picard: usize,
    /// Under-relaxation (damping) of the velocity update.
    pub relax: f64,
    /// Relative residual required from every linear solve.
    pub tol_lin: f64,
    pub homotopy_steps: usize,
    pub linearization: Linearization,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_nl: 1e-10,
            max_picard: 200,
            relax: 1.0,
            tol_lin: 1e-12,
            homotopy_steps: 4,
            linearization: Linearization::Newton,
        }
    }
}

impl SolverSettings {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.tol_nl > 0.0) {
            v.push("tol_nl > 0".to_string());
        }
        if !(self.tol_lin > 0.0) {
            v.push("tol_lin > 0".to_string());
        }
        if !(self.relax > 0.0 && self.relax <= 1.0) {
            v.push("relax ∈ (0, 1]".to_string());
        }
        if self.max_picard == 0 {
            v.push("max_picard >= 1".to_string());
        }
        if self.homotopy_steps == 0 {
            v.push("homotopy_steps >= 1".to_string());
        }
        v
    }
}

/// One time level. `z = ρθ` is the transported unknown; `theta` is always
/// recovered from it.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub k: usize,
    pub rho: CellField,
    pub theta: CellField,
    pub z: CellField,
    pub u: CrVectorField,
}

impl State {
    pub fn new(k: usize, rho: CellField, theta: CellField, u: CrVectorField) -> Self {
        let z = CellField { values: rho.values.iter().zip(&theta.values).map(|(r, t)| r * t).collect() };
        State { k, rho, theta, z, u }
    }

    fn from_transport(k: usize, rho: Vec<f64>, z: Vec<f64>, u: CrVectorField) -> Self {
        let theta = CellField { values: z.iter().zip(&rho).map(|(z, r)| z / r).collect() };
        State { k, rho: CellField { values: rho }, theta, z: CellField { values: z }, u }
    }

    pub fn rest(mesh: &SimplicialMesh) -> Self {
        State::new(
            0,
            CellField::constant(mesh, 1.0),
            CellField::constant(mesh, 1.0),
            CrVectorField::zeros(mesh, true),
        )
    }

    /// Cell averages `ū` of the velocity.
    pub fn u_bar(&self, mesh: &SimplicialMesh) -> Vec<Vector2> {
        crate::spaces::cell_average(mesh, &self.u)
    }
}

/// Projects continuous initial data and checks positivity and the strict
/// temperature bounds.
pub fn discrete_initial_data(
    mesh: &SimplicialMesh,
    rho0: impl Fn(Point) -> f64,
    theta0: impl Fn(Point) -> f64,
    u0: impl Fn(Point) -> Vector2,
    theta_bounds: (f64, f64),
) -> Result<State> {
    let rho = project_cell(mesh, rho0);
    let theta = project_cell(mesh, theta0);
    let u = project_cr_vector(mesh, u0, true);
    let (lo, hi) = theta_bounds;
    if let Some(k) = rho.values.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::Positivity(format!("projected density {} in element {k}", rho.values[k])));
    }
    if let Some(k) = theta.values.iter().position(|&t| !(t > lo && t < hi)) {
        return Err(Error::InvalidInput(format!(
            "projected temperature {} in element {k} outside ({lo}, {hi})",
            theta.values[k]
        )));
    }
    Ok(State::new(0, rho, theta, u))
}

/// Cellwise `(p, P)` for nonnegative `z`.
pub fn pressure(z: &CellField, params: &SchemeParams) -> Result<(CellField, CellField)> {
    if let Some(k) = z.values.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput(format!("negative Z = {} in element {k}", z.values[k])));
    }
    let p = CellField { values: z.values.iter().map(|&v| params.pressure(v)).collect() };
    let pp = CellField { values: z.values.iter().map(|&v| params.pressure_potential(v)).collect() };
    Ok((p, pp))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: State,
    pub picard_iters: usize,
    pub residual: f64,
    pub used_homotopy: bool,
}

/// Scaled residual components of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub rho: f64,
    pub z: f64,
    pub momentum: f64,
}

impl Residual {
    pub fn max(&self) -> f64 {
        self.rho.max(self.z).max(self.momentum)
    }
}

enum Attempt {
    Converged { rho: Vec<f64>, z: Vec<f64>, u: CrVectorField, iters: usize, residual: f64 },
    Failed { iters: usize, residual: f64 },
}

/// Per-mesh workspace: sparsity patterns, solver analyses and dof maps.
pub struct Stepper<'m> {
    mesh: &'m SimplicialMesh,
    params: SchemeParams,
    settings: SolverSettings,
    h_eps: f64,
    /// Momentum unknown index of each face (interior faces only).
    dof: Vec<Option<usize>>,
    dof_face: Vec<usize>,
    transport: CsrMatrix,
    transport_solver: DirectSolver,
    block: CsrMatrix,
    block_solver: DirectSolver,
    coupled: CsrMatrix,
    coupled_solver: DirectSolver,
    jacobian: CsrMatrix,
    jacobian_solver: DirectSolver,
    /// Factorized Jacobian kept across iterations and steps, with the `zeta`
    /// it was built for.
    newton_lu: Option<(Factorization, f64)>,
}

impl<'m> Stepper<'m> {
    pub fn new(mesh: &'m SimplicialMesh, params: SchemeParams, settings: SolverSettings) -> Result<Self> {
        params.validate()?;
        let bad = settings.violations();
        if !bad.is_empty() {
            return Err(Error::InvalidInput(bad.join("; ")));
        }
        let mut dof = vec![None; mesh.n_faces()];
        let dof_face: Vec<usize> = mesh.interior_faces().to_vec();
        for (i, &f) in dof_face.iter().enumerate() {
            dof[f] = Some(i);
        }
        // Convection couples everything on two neighbouring elements; that
        // stencil also covers the element-local mass and stiffness terms.
        let mut entries = Vec::new();
        let local = |k: usize| mesh.elements[k].faces.iter().filter_map(|&f| dof[f]).collect::<Vec<_>>();
        for k in 0..mesh.n_elements() {
            let d = local(k);
            for &i in &d {
                for &j in &d {
                    entries.push((i, j));
                }
            }
        }
        for &s in mesh.interior_faces() {
            let face = &mesh.faces[s];
            let mut d = local(face.in_element);
            d.extend(local(face.out_element.unwrap()));
            for &i in &d {
                for &j in &d {
                    entries.push((i, j));
                }
            }
        }
        let n = dof_face.len();
        let block = CsrMatrix::with_pattern(n, n, entries.iter().cloned());
        let coupled_entries = entries
            .iter()
            .flat_map(|&(i, j)| (0..2).flat_map(move |c| (0..2).map(move |e| (2 * i + c, 2 * j + e))));
        let coupled = CsrMatrix::with_pattern(2 * n, 2 * n, coupled_entries.collect::<Vec<_>>());
        let h_eps = params.h_eps(mesh.h);
        let mut stepper = Stepper {
            mesh,
            h_eps,
            dof,
            dof_face,
            transport: upwind::transport_pattern(mesh),
            transport_solver: DirectSolver::new(settings.tol_lin),
            block,
            block_solver: DirectSolver::new(settings.tol_lin),
            coupled,
            coupled_solver: DirectSolver::new(settings.tol_lin),
            jacobian: CsrMatrix::with_pattern(0, 0, []),
            jacobian_solver: DirectSolver::new(settings.tol_lin),
            newton_lu: None,
            params,
            settings,
        };
        // Every entry is emitted regardless of the upwind branch, so any
        // state gives the full pattern.
        let ones = vec![1.0; mesh.n_elements()];
        let rest = State::rest(mesh);
        let mut entries = Vec::new();
        stepper.jacobian_entries(&ones, &ones, &rest.u, 1.0, &mut |i, j, _| entries.push((i, j)));
        let size = 2 * mesh.n_elements() + 2 * n;
        stepper.jacobian = CsrMatrix::with_pattern(size, size, entries);
        Ok(stepper)
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn mesh(&self) -> &SimplicialMesh {
        self.mesh
    }

    /// Advances one time level.
    pub fn step(&mut self, prev: &State) -> Result<StepOutcome> {
        if !prev.u.boundary_constrained || !prev.u.vanishes_on_boundary(self.mesh) {
            return Err(Error::InvalidInput("velocity must satisfy the no-slip condition".into()));
        }
        let r0 = self.residual(prev, &prev.rho.values, &prev.z.values, &prev.u, 1.0).max();
        if r0 <= self.settings.tol_nl {
            let mut next = prev.clone();
            next.k = prev.k + 1;
            return Ok(StepOutcome { next, picard_iters: 0, residual: r0, used_homotopy: false });
        }

        let attempt = self.picard(prev, prev.u.clone(), 1.0)?;
        let mut total = 0;
        match attempt {
            Attempt::Converged { rho, z, u, iters, residual } => {
                return Ok(StepOutcome {
                    next: State::from_transport(prev.k + 1, rho, z, u),
                    picard_iters: iters,
                    residual,
                    used_homotopy: false,
                });
            }
            Attempt::Failed { iters, .. } => total += iters,
        }

        let n = self.settings.homotopy_steps;
        let mut u = prev.u.clone();
        for j in 1..=n {
            let zeta = j as f64 / n as f64;
            match self.picard(prev, u, zeta)? {
                Attempt::Converged { rho, z, u: uz, iters, residual } => {
                    total += iters;
                    if j == n {
                        return Ok(StepOutcome {
                            next: State::from_transport(prev.k + 1, rho, z, uz),
                            picard_iters: total,
                            residual,
                            used_homotopy: true,
                        });
                    }
                    u = uz;
                }
                Attempt::Failed { iters, residual } => {
                    return Err(Error::NonConvergence { step: prev.k + 1, residual, iterations: total + iters });
                }
            }
        }
        unreachable!("the last homotopy stage always returns")
    }

    fn picard(&mut self, prev: &State, start: CrVectorField, zeta: f64) -> Result<Attempt> {
        let mut u = start;
        let mut first = f64::NAN;
        let mut residual = f64::INFINITY;
        let mut last = f64::INFINITY;
        for m in 0..self.settings.max_picard {
            let (rho, z) = self.solve_transport(prev, &u, zeta)?;
            residual = self.residual(prev, &rho, &z, &u, zeta).max();
            if residual <= self.settings.tol_nl {
                return Ok(Attempt::Converged { rho, z, u, iters: m + 1, residual });
            }
            if m == 0 {
                first = residual;
            }
            if !residual.is_finite() || residual > 1e8 * first.max(1.0) {
                return Ok(Attempt::Failed { iters: m + 1, residual });
            }
            let w = self.settings.relax;
            match self.settings.linearization {
                Linearization::Picard => {
                    let target = self.solve_momentum(prev, &rho, &z, &u, zeta)?;
                    for (a, b) in u.values.iter_mut().zip(&target.values) {
                        a[0] = w * b[0] + (1.0 - w) * a[0];
                        a[1] = w * b[1] + (1.0 - w) * a[1];
                    }
                }
                Linearization::Newton => {
                    let refresh = residual > CHORD_CONTRACTION * last;
                    let du = self.newton_correction(prev, &rho, &z, &u, zeta, refresh)?;
                    for (i, &f) in self.dof_face.iter().enumerate() {
                        u.values[f][0] += w * du[i][0];
                        u.values[f][1] += w * du[i][1];
                    }
                }
            }
            last = residual;
        }
        Ok(Attempt::Failed { iters: self.settings.max_picard, residual })
    }

    fn solve_transport(&mut self, prev: &State, u: &CrVectorField, zeta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let dt = self.params.dt;
        upwind::assemble_transport_into(&mut self.transport, self.mesh, u, dt, self.h_eps, zeta)?;
        let lu = self.transport_solver.factorize(&self.transport)?;
        let rhs = |r: &[f64]| -> Vec<f64> {
            self.mesh.elements.iter().zip(r).map(|(e, v)| e.volume / dt * v).collect()
        };
        let rho = lu.solve(&rhs(&prev.rho.values))?;
        let z = lu.solve(&rhs(&prev.z.values))?;
        for (name, f) in [("density", &rho), ("Z", &z)] {
            if let Some(k) = f.iter().position(|&v| !(v >= POSITIVITY_FLOOR)) {
                return Err(Error::Positivity(format!(
                    "{name} = {:e} in element {k} after a transport solve",
                    f[k]
                )));
            }
        }
        Ok((rho, z))
    }

    /// Scaled residual of the `zeta`-scaled system at `(rho, z, u)`, with the
    /// convecting velocity taken from `u` itself.
    pub fn residual(&self, prev: &State, rho: &[f64], z: &[f64], u: &CrVectorField, zeta: f64) -> Residual {
        let mesh = self.mesh;
        let dt = self.params.dt;
        let fr = upwind::flux_balance(mesh, rho, u, self.h_eps);
        let fz = upwind::flux_balance(mesh, z, u, self.h_eps);
        let mut res = Residual { rho: 0.0, z: 0.0, momentum: 0.0 };
        for (k, e) in mesh.elements.iter().enumerate() {
            let s = dt / e.volume;
            let rr = (e.volume / dt * (rho[k] - prev.rho.values[k]) + zeta * fr[k]) * s;
            let rz = (e.volume / dt * (z[k] - prev.z.values[k]) + zeta * fz[k]) * s;
            res.rho = res.rho.max(rr.abs());
            res.z = res.z.max(rz.abs());
        }
        let (rm, diag) = self.momentum_residual(prev, rho, z, u, zeta);
        for (r, d) in rm.iter().zip(&diag) {
            res.momentum = res.momentum.max((r[0] / d[0]).abs()).max((r[1] / d[1]).abs());
        }
        if !(res.rho.is_finite() && res.z.is_finite() && res.momentum.is_finite()) {
            res.momentum = f64::INFINITY;
        }
        res
    }

    /// Unscaled momentum residual per unknown, plus the scaling diagonal.
    pub fn momentum_residual(
        &self,
        prev: &State,
        rho: &[f64],
        z: &[f64],
        u: &CrVectorField,
        zeta: f64,
    ) -> (Vec<Vector2>, Vec<Vector2>) {
        let mesh = self.mesh;
        let p = &self.params;
        let dt = p.dt;
        let nu = p.nu();
        let n = self.dof_face.len();
        let mut r = vec![[0.0; 2]; n];
        let mut diag = vec![[0.0; 2]; n];
        let ubar = crate::spaces::cell_average(mesh, u);
        let ubar_old = crate::spaces::cell_average(mesh, &prev.u);

        for (k, e) in mesh.elements.iter().enumerate() {
            let g = u.gradient_on(mesh, k);
            let div = g[0][0] + g[1][1];
            let m_new = [rho[k] * ubar[k][0], rho[k] * ubar[k][1]];
            let m_old = [prev.rho.values[k] * ubar_old[k][0], prev.rho.values[k] * ubar_old[k][1]];
            for &f in &e.faces {
                let Some(i) = self.dof[f] else { continue };
                let nk = mesh.outward_normal(f, k);
                let len = mesh.faces[f].measure;
                for c in 0..2 {
                    r[i][c] += e.volume / (3.0 * dt) * (m_new[c] - m_old[c])
                        + p.mu * len * (g[c][0] * nk[0] + g[c][1] * nk[1])
                        + zeta * nu * len * div * nk[c];
                    diag[i][c] += e.volume * rho[k] / (9.0 * dt)
                        + p.mu * len * len / e.volume
                        + zeta * nu * len * len * nk[c] * nk[c] / e.volume;
                }
            }
        }
        for &s in mesh.interior_faces() {
            let face = &mesh.faces[s];
            let (a, b) = (face.in_element, face.out_element.unwrap());
            let (c_in, c_out) = upwind_weights(u.normal_flux(mesh, s), self.h_eps);
            let flux = [
                c_in * rho[a] * ubar[a][0] + c_out * rho[b] * ubar[b][0],
                c_in * rho[a] * ubar[a][1] + c_out * rho[b] * ubar[b][1],
            ];
            let w = zeta * face.measure / 3.0;
            for (elem, sign) in [(a, 1.0), (b, -1.0)] {
                for &f in &mesh.elements[elem].faces {
                    if let Some(i) = self.dof[f] {
                        r[i][0] += sign * w * flux[0];
                        r[i][1] += sign * w * flux[1];
                    }
                }
            }
            // pressure: Π_a |σ| n_σ from the in side, -Π_b |σ| n_σ from the out side
            let i = self.dof[s].unwrap();
            let h = mesh.h;
            let dp = p.total_pressure(rho[a], z[a], h) - p.total_pressure(rho[b], z[b], h);
            r[i][0] -= zeta * face.measure * face.normal[0] * dp;
            r[i][1] -= zeta * face.measure * face.normal[1] * dp;
        }
        (r, diag)
    }

    /// Linearized momentum solve: `ρ` and `Z` frozen, convecting velocity
    /// lagged at `lag`.
    fn solve_momentum(
        &mut self,
        prev: &State,
        rho: &[f64],
        z: &[f64],
        lag: &CrVectorField,
        zeta: f64,
    ) -> Result<CrVectorField> {
        let mesh = self.mesh;
        let p = self.params.clone();
        let dt = p.dt;
        let h = mesh.h;
        let n = self.dof_face.len();
        let ubar_old = crate::spaces::cell_average(mesh, &prev.u);
        let mut rhs = vec![[0.0; 2]; n];

        let block = &mut self.block;
        block.clear();
        for (k, e) in mesh.elements.iter().enumerate() {
            let locals: Vec<(usize, Point, f64)> = e
                .faces
                .iter()
                .filter_map(|&f| self.dof[f].map(|i| (i, mesh.outward_normal(f, k), mesh.faces[f].measure)))
                .collect();
            let mass = e.volume * rho[k] / (9.0 * dt);
            for &(i, ni, li) in &locals {
                for &(j, nj, lj) in &locals {
                    block.add(i, j, mass + p.mu * li * lj * (ni[0] * nj[0] + ni[1] * nj[1]) / e.volume);
                }
                for c in 0..2 {
                    rhs[i][c] += e.volume / (3.0 * dt) * prev.rho.values[k] * ubar_old[k][c];
                }
            }
        }
        for &s in mesh.interior_faces() {
            let face = &mesh.faces[s];
            let (a, b) = (face.in_element, face.out_element.unwrap());
            let (c_in, c_out) = upwind_weights(lag.normal_flux(mesh, s), self.h_eps);
            let w = zeta * face.measure / 3.0;
            for (elem, sign) in [(a, 1.0), (b, -1.0)] {
                for &f in &mesh.elements[elem].faces {
                    let Some(i) = self.dof[f] else { continue };
                    for (src, coef) in [(a, c_in * rho[a]), (b, c_out * rho[b])] {
                        for &g in &mesh.elements[src].faces {
                            if let Some(j) = self.dof[g] {
                                block.add(i, j, sign * w * coef / 3.0);
                            }
                        }
                    }
                }
            }
            let i = self.dof[s].unwrap();
            let dp = p.total_pressure(rho[a], z[a], h) - p.total_pressure(rho[b], z[b], h);
            rhs[i][0] += zeta * face.measure * face.normal[0] * dp;
            rhs[i][1] += zeta * face.measure * face.normal[1] * dp;
        }

        let nu = zeta * p.nu();
        let mut u = CrVectorField::zeros(mesh, true);
        if nu == 0.0 {
            let lu = self.block_solver.factorize(&self.block)?;
            for c in 0..2 {
                let b: Vec<f64> = rhs.iter().map(|v| v[c]).collect();
                let x = lu.solve(&b)?;
                for (i, &f) in self.dof_face.iter().enumerate() {
                    u.values[f][c] = x[i];
                }
            }
        } else {
            let coupled = &mut self.coupled;
            coupled.clear();
            for i in 0..n {
                for (j, v) in self.block.row(i) {
                    coupled.add(2 * i, 2 * j, v);
                    coupled.add(2 * i + 1, 2 * j + 1, v);
                }
            }
            for (k, e) in mesh.elements.iter().enumerate() {
                for &f in &e.faces {
                    let Some(i) = self.dof[f] else { continue };
                    let ni = mesh.outward_normal(f, k);
                    let li = mesh.faces[f].measure;
                    for &g in &e.faces {
                        let Some(j) = self.dof[g] else { continue };
                        let nj = mesh.outward_normal(g, k);
                        let lj = mesh.faces[g].measure;
                        for c in 0..2 {
                            for d in 0..2 {
                                coupled.add(2 * i + c, 2 * j + d, nu * li * lj * ni[c] * nj[d] / e.volume);
                            }
                        }
                    }
                }
            }
            let lu = self.coupled_solver.factorize(&self.coupled)?;
            let b: Vec<f64> = rhs.iter().flat_map(|v| [v[0], v[1]]).collect();
            let x = lu.solve(&b)?;
            for (i, &f) in self.dof_face.iter().enumerate() {
                u.values[f] = [x[2 * i], x[2 * i + 1]];
            }
        }
        Ok(u)
    }

    /// Velocity part of the step `J δ = -R` of the full system at
    /// `(rho, z, u)`. The Jacobian is rebuilt only when `refresh` is set or
    /// no factorization for this `zeta` is held; otherwise the stored one
    /// is reused (chord iteration).
    fn newton_correction(
        &mut self,
        prev: &State,
        rho: &[f64],
        z: &[f64],
        u: &CrVectorField,
        zeta: f64,
        refresh: bool,
    ) -> Result<Vec<Vector2>> {
        let nc = self.mesh.n_elements();
        let stale = !matches!(&self.newton_lu, Some((_, zs)) if *zs == zeta);
        if refresh || stale {
            self.newton_lu = None;
            let mut jac = std::mem::replace(&mut self.jacobian, CsrMatrix::with_pattern(0, 0, []));
            jac.clear();
            self.jacobian_entries(rho, z, u, zeta, &mut |i, j, v| jac.add(i, j, v));
            let lu = self.jacobian_solver.factorize(&jac);
            self.jacobian = jac;
            self.newton_lu = Some((lu?, zeta));
        }
        let mut rhs = vec![0.0; self.jacobian.nrows()];
        let dt = self.params.dt;
        let fr = upwind::flux_balance(self.mesh, rho, u, self.h_eps);
        let fz = upwind::flux_balance(self.mesh, z, u, self.h_eps);
        for (k, e) in self.mesh.elements.iter().enumerate() {
            rhs[k] = -(e.volume / dt * (rho[k] - prev.rho.values[k]) + zeta * fr[k]);
            rhs[nc + k] = -(e.volume / dt * (z[k] - prev.z.values[k]) + zeta * fz[k]);
        }
        let (rm, _) = self.momentum_residual(prev, rho, z, u, zeta);
        for (i, r) in rm.iter().enumerate() {
            rhs[2 * nc + 2 * i] = -r[0];
            rhs[2 * nc + 2 * i + 1] = -r[1];
        }
        let (lu, _) = self.newton_lu.as_ref().expect("factorized above");
        let x = lu.solve(&rhs)?;
        Ok((0..self.dof_face.len()).map(|i| [x[2 * nc + 2 * i], x[2 * nc + 2 * i + 1]]).collect())
    }

    /// Jacobian of the unscaled residual in the unknown ordering
    /// `(ρ_K, Z_K, u_i^c)`, handed out entry by entry.
    fn jacobian_entries(
        &self,
        rho: &[f64],
        z: &[f64],
        u: &CrVectorField,
        zeta: f64,
        add: &mut dyn FnMut(usize, usize, f64),
    ) {
        let mesh = self.mesh;
        let p = &self.params;
        let dt = p.dt;
        let nu = p.nu();
        let hd = p.h_delta(mesh.h);
        let nc = mesh.n_elements();
        let (rr, zz) = (|k: usize| k, |k: usize| nc + k);
        let uu = |i: usize, c: usize| 2 * nc + 2 * i + c;
        let ubar = crate::spaces::cell_average(mesh, u);

        for (k, e) in mesh.elements.iter().enumerate() {
            add(rr(k), rr(k), e.volume / dt);
            add(zz(k), zz(k), e.volume / dt);
            let locals: Vec<(usize, Point, f64)> = e
                .faces
                .iter()
                .filter_map(|&f| self.dof[f].map(|i| (i, mesh.outward_normal(f, k), mesh.faces[f].measure)))
                .collect();
            let mass = e.volume * rho[k] / (9.0 * dt);
            for &(i, ni, li) in &locals {
                for c in 0..2 {
                    add(uu(i, c), rr(k), e.volume / (3.0 * dt) * ubar[k][c]);
                    for &(j, nj, lj) in &locals {
                        add(uu(i, c), uu(j, c), mass + p.mu * li * lj * (ni[0] * nj[0] + ni[1] * nj[1]) / e.volume);
                        for d in 0..2 {
                            add(uu(i, c), uu(j, d), zeta * nu * li * lj * ni[c] * nj[d] / e.volume);
                        }
                    }
                }
            }
        }

        for &s in mesh.interior_faces() {
            let face = &mesh.faces[s];
            let (a, b) = (face.in_element, face.out_element.unwrap());
            let n = face.normal;
            let len = face.measure;
            let q = u.normal_flux(mesh, s);
            let (c_in, c_out) = upwind_weights(q, self.h_eps);
            let up = if q > 0.0 { 1.0 } else { 0.0 };
            let is = self.dof[s].unwrap();

            // transport rows
            for (base, vals) in [(0, rho), (nc, z)] {
                let dq = up * vals[a] + (1.0 - up) * vals[b];
                for (elem, sign) in [(a, 1.0), (b, -1.0)] {
                    let w = sign * zeta * len;
                    add(base + elem, base + a, w * c_in);
                    add(base + elem, base + b, w * c_out);
                    for c in 0..2 {
                        add(base + elem, uu(is, c), w * dq * n[c]);
                    }
                }
            }

            // convection of momentum
            let dflux_dq = [
                up * rho[a] * ubar[a][0] + (1.0 - up) * rho[b] * ubar[b][0],
                up * rho[a] * ubar[a][1] + (1.0 - up) * rho[b] * ubar[b][1],
            ];
            for (elem, sign) in [(a, 1.0), (b, -1.0)] {
                let w = sign * zeta * len / 3.0;
                for &f in &mesh.elements[elem].faces {
                    let Some(i) = self.dof[f] else { continue };
                    for c in 0..2 {
                        add(uu(i, c), rr(a), w * c_in * ubar[a][c]);
                        add(uu(i, c), rr(b), w * c_out * ubar[b][c]);
                        for (src, coef) in [(a, c_in * rho[a]), (b, c_out * rho[b])] {
                            for &g in &mesh.elements[src].faces {
                                if let Some(j) = self.dof[g] {
                                    add(uu(i, c), uu(j, c), w * coef / 3.0);
                                }
                            }
                        }
                        for d in 0..2 {
                            add(uu(i, c), uu(is, d), w * dflux_dq[c] * n[d]);
                        }
                    }
                }
            }

            // pressure
            let dpi_drho = |r: f64| 2.0 * hd * r;
            let dpi_dz = |v: f64| p.a * p.gamma * v.powf(p.gamma - 1.0) + 2.0 * hd * v;
            for c in 0..2 {
                let w = zeta * len * n[c];
                add(uu(is, c), rr(a), -w * dpi_drho(rho[a]));
                add(uu(is, c), zz(a), -w * dpi_dz(z[a]));
                add(uu(is, c), rr(b), w * dpi_drho(rho[b]));
                add(uu(is, c), zz(b), w * dpi_dz(z[b]));
            }
        }
    }

    /// Assembled matrices of the current linearization, for inspection.
    pub fn transport_matrix(&mut self, u: &CrVectorField) -> Result<&CsrMatrix> {
        upwind::assemble_transport_into(&mut self.transport, self.mesh, u, self.params.dt, self.h_eps, 1.0)?;
        Ok(&self.transport)
    }
}

/// Data handed to the per-step callback of [`run`].
pub struct StepRecord<'a> {
    pub prev: &'a State,
    pub next: &'a State,
    pub picard_iters: usize,
    pub residual: f64,
    pub used_homotopy: bool,
}

/// Advances `initial` through all `T/Δt` steps. Errors carry the failing level.
pub fn run<F>(
    mesh: &SimplicialMesh,
    initial: State,
    params: &SchemeParams,
    settings: &SolverSettings,
    mut callback: F,
) -> Result<State>
where
    F: FnMut(&StepRecord) -> Result<()>,
{
    let steps = params.steps()?;
    let mut stepper = Stepper::new(mesh, params.clone(), settings.clone())?;
    let mut state = initial;
    for _ in 0..steps {
        let level = state.k + 1;
        let out = stepper
            .step(&state)
            .map_err(|e| Error::AtLevel { level, source: Box::new(e) })?;
        callback(&StepRecord {
            prev: &state,
            next: &out.next,
            picard_iters: out.picard_iters,
            residual: out.residual,
            used_homotopy: out.used_homotopy,
        })
        .map_err(|e| Error::AtLevel { level, source: Box::new(e) })?;
        state = out.next;
    }
    Ok(state)
}
