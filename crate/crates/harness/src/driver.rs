//! Single runs: step the scheme, evaluate diagnostics per level, write files.

use std::path::Path;
use std::time::Instant;

use fefv_core::diagnostics::{
    energy_balance, entropy_margin, total_energy, ConservationReport, ConservationTracker, StabilityMonitor,
};
use fefv_core::scheme::{run, StepRecord, Stepper};
use fefv_core::spaces::{cr_vector_grad_l2_norm, divergence};
use fefv_core::SimplicialMesh;
use fefv_core::State;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Experiment;
use crate::output::{save_matrix_market, save_state_vtk, CsvSink, DiagnosticsRow};
use crate::{io_error, Result};

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<DiagnosticsRow>,
    pub initial_energy: f64,
    pub initial_mass_rho: f64,
    pub initial_mass_z: f64,
    pub conservation: ConservationReport,
    pub monitor: StabilityMonitor,
    pub final_state: State,
    pub seconds: f64,
}

/// Evaluates the per-level diagnostics of completed steps.
pub struct Diagnostics<'a> {
    mesh: &'a SimplicialMesh,
    exp: &'a Experiment,
    rng: ChaCha8Rng,
    tracker: ConservationTracker,
    monitor: StabilityMonitor,
    energy: f64,
}

impl<'a> Diagnostics<'a> {
    pub fn new(mesh: &'a SimplicialMesh, exp: &'a Experiment, initial: &State) -> Self {
        Diagnostics {
            mesh,
            exp,
            rng: ChaCha8Rng::seed_from_u64(exp.diagnostics.seed),
            tracker: ConservationTracker::new(mesh, initial),
            monitor: StabilityMonitor::start(mesh, initial, &exp.params),
            energy: total_energy(mesh, initial, &exp.params).total,
        }
    }

    pub fn observe(&mut self, r: &StepRecord) -> Result<DiagnosticsRow> {
        let (mesh, p) = (self.mesh, &self.exp.params);
        let next = r.next;
        let balance = energy_balance(mesh, r.prev, next, p, r.residual, self.exp.settings.tol_nl)?;
        let nc = mesh.n_elements();
        let margin_one = entropy_margin(mesh, r.prev, next, p, &vec![1.0; nc])?;
        let mut margin_min = margin_one;
        for _ in 0..self.exp.diagnostics.entropy_samples {
            let psi: Vec<f64> = (0..nc).map(|_| self.rng.random::<f64>()).collect();
            margin_min = margin_min.min(entropy_margin(mesh, r.prev, next, p, &psi)?);
        }
        self.tracker.observe(mesh, next);
        self.monitor.observe(mesh, next, p);
        let div = divergence(mesh, &next.u);
        let div_l2 = div.iter().zip(&mesh.elements).map(|(d, e)| d * d * e.volume).sum::<f64>().sqrt();
        let e = balance.next;
        let row = DiagnosticsRow {
            k: next.k,
            t: next.k as f64 * p.dt,
            total_energy: e.total,
            kinetic: e.kinetic,
            internal: e.internal,
            artificial: e.artificial,
            energy_increment: e.total - self.energy,
            energy_residual: balance.residual.unwrap_or(f64::NAN),
            entropy_margin: margin_one,
            entropy_margin_min: margin_min,
            mass_rho: next.rho.integral(mesh),
            mass_z: next.z.integral(mesh),
            min_rho: next.rho.min(),
            min_theta: next.theta.min(),
            max_theta: next.theta.max(),
            grad_u_l2: cr_vector_grad_l2_norm(mesh, &next.u),
            div_u_l2: div_l2,
            rho_jumps: self.monitor.rho_jumps,
            z_jumps: self.monitor.z_jumps,
            velocity_jump_penalty: self.monitor.velocity_jump_penalty,
            velocity_upwind: self.monitor.velocity_upwind,
            picard_iters: r.picard_iters,
            nl_residual: r.residual,
            used_homotopy: r.used_homotopy,
        };
        self.energy = e.total;
        Ok(row)
    }
}

/// Runs the experiment, handing every diagnostics row and step to `observer`.
pub fn simulate<F>(exp: &Experiment, mut observer: F) -> Result<RunSummary>
where
    F: FnMut(&DiagnosticsRow, &StepRecord) -> Result<()>,
{
    let start = Instant::now();
    let mesh = exp.mesh()?;
    let initial = exp.preset.initial_state(&mesh, &exp.domain, exp.theta_bounds)?;
    let mut diag = Diagnostics::new(&mesh, exp, &initial);
    let (initial_energy, m_rho, m_z) = (diag.energy, initial.rho.integral(&mesh), initial.z.integral(&mesh));
    let mut rows = Vec::new();
    let mut failure = None;
    let last = run(&mesh, initial, &exp.params, &exp.settings, |r| {
        let row = match diag.observe(r).and_then(|row| observer(&row, r).map(|_| row)) {
            Ok(row) => row,
            Err(e) => {
                failure = Some(e);
                return Err(fefv_core::Error::InvalidInput("diagnostics failed".into()));
            }
        };
        rows.push(row);
        Ok(())
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let final_state = last?;
    Ok(RunSummary {
        rows,
        initial_energy,
        initial_mass_rho: m_rho,
        initial_mass_z: m_z,
        conservation: diag.tracker.report(),
        monitor: diag.monitor,
        final_state,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the experiment and writes the configured outputs into `dir`.
pub fn run_to_directory(exp: &Experiment, dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mesh = exp.mesh()?;
    let vtk = exp.wants("vtk");
    if exp.output.matrix_market {
        let initial = exp.preset.initial_state(&mesh, &exp.domain, exp.theta_bounds)?;
        let mut stepper = Stepper::new(&mesh, exp.params.clone(), exp.settings.clone())?;
        save_matrix_market(&dir.join("transport_k1.mtx"), stepper.transport_matrix(&initial.u)?)?;
    }
    if vtk {
        let initial = exp.preset.initial_state(&mesh, &exp.domain, exp.theta_bounds)?;
        save_state_vtk(&dir.join(snapshot_name(0)), &mesh, &initial, &exp.params)?;
    }
    let mut csv = if exp.wants("csv") { Some(CsvSink::create(&dir.join("diagnostics.csv"))?) } else { None };
    let steps = exp.params.steps()?;
    let stride = exp.output.stride;
    let summary = simulate(exp, |row, r| {
        if let Some(c) = csv.as_mut() {
            c.push(row)?;
        }
        let k = r.next.k;
        if vtk && (k == steps || (stride > 0 && k % stride == 0)) {
            save_state_vtk(&dir.join(snapshot_name(k)), &mesh, r.next, &exp.params)?;
        }
        Ok(())
    })?;
    if let Some(c) = csv {
        c.finish()?;
    }
    Ok(summary)
}

pub fn snapshot_name(k: usize) -> String {
    format!("state_{k:06}.vtk")
}
