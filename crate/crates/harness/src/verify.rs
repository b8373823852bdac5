//! Randomized identity suites over the discrete operators, with a
//! machine-readable report. Every instance draws from its own seed, derived
//! from the run seed, the suite and the instance index, so a failure can be
//! replayed alone.

use fefv_core::diagnostics::energy_balance;
use fefv_core::mesh::Point;
use fefv_core::quadrature::integrate_element;
use fefv_core::scheme::{SchemeParams, Stepper};
use fefv_core::sparse::DirectSolver;
use fefv_core::spaces::{
    cr_face_means, divergence, project_cr_vector, CellField, CrScalarField, CrVectorField, Tensor2, Vector2,
};
use fefv_core::upwind::{
    assemble_transport_operator, flux_balance_with_sign, upwind_dissipative, upwind_dissipative_centered,
    upwind_identity_sides, upwind_identity_sides_vec, upwind_plain, upwind_plain_centered, upwind_weights,
};
use fefv_core::{SimplicialMesh, SolverSettings, State};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::rates::{rates_report, RatesReport};
use crate::Result;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub instances: usize,
    /// Meshes cycle through `1..=max_n` cells per side.
    pub max_n: usize,
    /// The energy suite solves a nonlinear step per instance, so it gets its
    /// own count and mesh bound.
    pub energy_instances: usize,
    pub energy_max_n: usize,
    /// Negative control: add receiving-side fluxes with the wrong sign.
    pub corrupt_flux_sign: bool,
    pub include_rates: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            instances: 1000,
            max_n: 16,
            energy_instances: 40,
            energy_max_n: 8,
            corrupt_flux_sign: false,
            include_rates: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Offender {
    pub index: usize,
    pub seed: u64,
    pub n: usize,
    pub discrepancy: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub tolerance: f64,
    pub max_discrepancy: f64,
    pub pass: bool,
    /// First failing instance, if any.
    pub offender: Option<Offender>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub instances: usize,
    pub max_n: usize,
    pub corrupt_flux_sign: bool,
    pub suites: Vec<SuiteResult>,
    pub rates: Option<RatesReport>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }
}

/// SplitMix64 step; spreads `(seed, suite, index)` into independent streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn instance_seed(seed: u64, suite: usize, index: usize) -> u64 {
    mix(mix(mix(seed) ^ suite as u64) ^ index as u64)
}

/// What one instance returns: discrepancy, mesh size, description.
type Outcome = (f64, usize, String);

type Instance = Box<dyn Fn(&mut ChaCha8Rng, usize) -> Result<Outcome>>;

struct Suite {
    name: &'static str,
    tolerance: f64,
    instances: usize,
    run: Instance,
}

fn run_suite(id: usize, s: &Suite, seed: u64) -> SuiteResult {
    let mut max_d = 0.0f64;
    let mut offender = None;
    for i in 0..s.instances {
        let iseed = instance_seed(seed, id, i);
        let mut rng = ChaCha8Rng::seed_from_u64(iseed);
        let (d, n, detail) = match (s.run)(&mut rng, i) {
            Ok(o) => o,
            Err(e) => (f64::INFINITY, 0, format!("error: {e}")),
        };
        let bad = !(d <= s.tolerance);
        max_d = if d.is_nan() { f64::NAN } else { max_d.max(d) };
        if bad && offender.is_none() {
            offender = Some(Offender { index: i, seed: iseed, n, discrepancy: d, detail });
        }
    }
    SuiteResult {
        name: s.name,
        instances: s.instances,
        tolerance: s.tolerance,
        max_discrepancy: max_d,
        pass: offender.is_none(),
        offender,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn cells(rng: &mut ChaCha8Rng, m: &SimplicialMesh, lo: f64, hi: f64) -> Vec<f64> {
    (0..m.n_elements()).map(|_| rng.random_range(lo..hi)).collect()
}

fn no_slip(rng: &mut ChaCha8Rng, m: &SimplicialMesh, size: f64) -> CrVectorField {
    let mut v = CrVectorField::zeros(m, true);
    for &f in m.interior_faces() {
        v.values[f] = [rng.random_range(-size..size), rng.random_range(-size..size)];
    }
    v
}

fn cubic(c: &[f64]) -> (impl Fn(Point) -> f64 + '_, impl Fn(Point) -> Vector2 + '_) {
    let phi = move |x: Point| {
        let (a, b) = (x[0], x[1]);
        c[0] + c[1] * a + c[2] * b + c[3] * a * a + c[4] * a * b + c[5] * b * b
            + c[6] * a * a * a + c[7] * a * a * b + c[8] * a * b * b + c[9] * b * b * b
    };
    let grad = move |x: Point| {
        let (a, b) = (x[0], x[1]);
        [
            c[1] + 2.0 * c[3] * a + c[4] * b + 3.0 * c[6] * a * a + 2.0 * c[7] * a * b + c[8] * b * b,
            c[2] + c[4] * a + 2.0 * c[5] * b + c[7] * a * a + 2.0 * c[8] * a * b + 3.0 * c[9] * b * b,
        ]
    };
    (phi, grad)
}

fn closed_forms(rng: &mut ChaCha8Rng) -> Outcome {
    let (ri, ro) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
    let q = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(-5.0..5.0) };
    let he = rng.random_range(0.0..1.0);
    let (ci, co) = upwind_weights(q, he);
    let d = rel(upwind_plain(ri, ro, q), upwind_plain_centered(ri, ro, q))
        .max(rel(upwind_dissipative(ri, ro, q, he), upwind_dissipative_centered(ri, ro, q, he)))
        .max(rel(upwind_dissipative(ri, ro, q, he), ci * ri + co * ro));
    (d, 0, format!("r_in = {ri}, r_out = {ro}, q = {q}, h_eps = {he}"))
}

fn conservation(rng: &mut ChaCha8Rng, n: usize, out_sign: f64) -> Result<Outcome> {
    let m = SimplicialMesh::unit_square(n)?;
    let r = cells(rng, &m, 0.1, 2.0);
    let u = no_slip(rng, &m, 1.0);
    let he = rng.random_range(0.0..0.5);
    let b = flux_balance_with_sign(&m, &r, &u, he, out_sign);
    let scale: f64 = b.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let d_sum = b.iter().sum::<f64>().abs() / scale;
    // and through the assembled matrix: 1ᵀ A r = Σ|K| r_K / Δt
    let dt = rng.random_range(0.01..1.0);
    let a = assemble_transport_operator(&m, &u, dt, he)?;
    let lhs: f64 = a.mul_vec(&r).iter().sum();
    let rhs: f64 = r.iter().zip(&m.elements).map(|(r, e)| r * e.volume).sum::<f64>() / dt;
    let d = d_sum.max(rel(lhs, rhs));
    Ok((d, n, format!("sum of flux balances {:e}, matrix column sums off by {:e}", d_sum, rel(lhs, rhs))))
}

fn rearrangement(rng: &mut ChaCha8Rng, n: usize, vector: bool) -> Result<Outcome> {
    let m = SimplicialMesh::unit_square(n)?;
    let r = cells(rng, &m, -1.0, 1.0);
    let f = cells(rng, &m, -1.0, 1.0);
    let v = no_slip(rng, &m, 1.0);
    let c: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let he = if rng.random_bool(0.5) { Some(rng.random_range(0.0..0.5)) } else { None };
    let (phi, grad) = cubic(&c);
    let (l, rr) = if vector {
        let s: Vec<Vector2> = r.iter().zip(&f).map(|(a, b)| [*a, b * 0.5]).collect();
        let g: Vec<Vector2> = f.iter().zip(&r).map(|(a, b)| [*a, *b]).collect();
        let psi = |x: Point| [phi(x), phi([x[1], x[0]])];
        let gpsi = |x: Point| {
            let g1 = grad([x[1], x[0]]);
            [grad(x), [g1[1], g1[0]]]
        };
        upwind_identity_sides_vec(&m, &s, &g, &v, &psi, &gpsi, he)
    } else {
        upwind_identity_sides(&m, &r, &f, &v, &phi, &grad, he)
    };
    Ok((rel(l, rr), n, format!("sides {l:e} and {rr:e}, h_eps {he:?}")))
}

fn projection_identities(rng: &mut ChaCha8Rng, n: usize) -> Result<Outcome> {
    let m = SimplicialMesh::unit_square(n)?;
    let v = no_slip(rng, &m, 1.0);
    let r = cells(rng, &m, -1.0, 1.0);
    let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    // bubble times a random affine field: vanishes on the boundary, degree 5
    let bubble = |x: Point| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
    let lin = |x: Point, i: usize| c[3 * i] + c[3 * i + 1] * x[0] + c[3 * i + 2] * x[1];
    let phi = |x: Point| [bubble(x) * lin(x, 0), bubble(x) * lin(x, 1)];
    let dphi = |x: Point| -> Tensor2 {
        let bx = (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]);
        let by = x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1]);
        let b = bubble(x);
        let row = |i: usize| [bx * lin(x, i) + b * c[3 * i + 1], by * lin(x, i) + b * c[3 * i + 2]];
        [row(0), row(1)]
    };
    let pv = project_cr_vector(&m, phi, true);
    let contract = |a: &Tensor2, b: &Tensor2| a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1];
    let (mut lg, mut rg, mut ld, mut rd) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..m.n_elements() {
        let gv = v.gradient_on(&m, k);
        let vol = m.elements[k].volume;
        lg += vol * contract(&gv, &pv.gradient_on(&m, k));
        rg += integrate_element(&m, k, |x| contract(&gv, &dphi(x)));
        ld += vol * r[k] * pv.divergence_on(&m, k);
        rd += integrate_element(&m, k, |x| {
            let d = dphi(x);
            r[k] * (d[0][0] + d[1][1])
        });
    }
    let d = rel(lg, rg).max(rel(ld, rd));
    Ok((d, n, format!("gradient pairing {lg:e} vs {rg:e}, divergence pairing {ld:e} vs {rd:e}")))
}

fn mean_matching(rng: &mut ChaCha8Rng, n: usize) -> Result<Outcome> {
    let m = SimplicialMesh::unit_square(n)?;
    let v = CrScalarField {
        values: (0..m.n_faces()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        boundary_constrained: false,
    };
    let mut worst = (0.0f64, 0usize);
    for &f in m.interior_faces() {
        let t = cr_face_means(&m, &v, f);
        let d = rel(t.in_value, t.out_value).max(rel(t.in_value, v.values[f]));
        if d > worst.0 {
            worst = (d, f);
        }
    }
    Ok((worst.0, n, format!("face {}", worst.1)))
}

fn divergence_integral(rng: &mut ChaCha8Rng, n: usize) -> Result<Outcome> {
    let m = SimplicialMesh::unit_square(n)?;
    let v = no_slip(rng, &m, 1.0);
    let total: f64 = divergence(&m, &v).iter().zip(&m.elements).map(|(d, e)| d * e.volume).sum();
    Ok((total.abs(), n, format!("∫ div = {total:e}")))
}

/// M-matrix structure of the transport operator and positivity of its solves.
fn monotonicity(rng: &mut ChaCha8Rng, n: usize) -> Result<Outcome> {
    let m = SimplicialMesh::unit_square(n)?;
    let u = no_slip(rng, &m, 2.0);
    let dt = rng.random_range(0.01..1.0);
    let he = rng.random_range(0.0..0.5);
    let a = assemble_transport_operator(&m, &u, dt, he)?;
    let mut worst = 0.0f64;
    let mut detail = String::from("structure holds");
    for i in 0..a.nrows() {
        for (j, v) in a.row(i) {
            if i != j && v > 0.0 {
                worst = worst.max(v);
                detail = format!("positive off-diagonal ({i}, {j}) = {v:e}");
            }
        }
    }
    let rhs: Vec<f64> = m.elements.iter().map(|e| e.volume / dt * rng.random_range(0.1..2.0)).collect();
    let x = DirectSolver::new(1e-12).factorize(&a)?.solve(&rhs)?;
    if let Some(k) = x.iter().position(|&v| !(v > 0.0)) {
        worst = f64::INFINITY;
        detail = format!("solution not positive in element {k}: {}", x[k]);
    }
    Ok((worst, n, detail))
}

fn energy_identity(rng: &mut ChaCha8Rng, n: usize) -> Result<Outcome> {
    let m = SimplicialMesh::unit_square(n)?;
    let params = SchemeParams {
        gamma: 2.0,
        a: rng.random_range(0.5..2.0),
        mu: rng.random_range(0.05..0.5),
        lambda: rng.random_range(0.0..0.2),
        epsilon: rng.random_range(1.1..1.9),
        delta: rng.random_range(0.05..0.45),
        dt: 0.5 * m.h,
        t_final: 0.5 * m.h,
    };
    let rho = CellField { values: cells(rng, &m, 0.5, 1.5) };
    let theta = CellField { values: cells(rng, &m, 0.6, 1.6) };
    let prev = State::new(0, rho, theta, no_slip(rng, &m, 0.2));
    let settings = SolverSettings::default();
    let out = Stepper::new(&m, params.clone(), settings.clone())?.step(&prev)?;
    let b = energy_balance(&m, &prev, &out.next, &params, out.residual, settings.tol_nl)?;
    let d = b.residual.unwrap_or(f64::INFINITY);
    Ok((d, n, format!("a = {}, mu = {}, epsilon = {}, delta = {}", params.a, params.mu, params.epsilon, params.delta)))
}

/// Runs all suites and, optionally, the projection and Poincaré rate checks.
pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let max_n = opts.max_n.max(1);
    let e_max = opts.energy_max_n.clamp(2, max_n.max(2));
    let size = move |i: usize| 1 + i % max_n;
    let out_sign = if opts.corrupt_flux_sign { 1.0 } else { -1.0 };
    let count = opts.instances;
    let suites = vec![
        Suite { name: "upwind_closed_forms", tolerance: 1e-12, instances: count, run: Box::new(|g, _| Ok(closed_forms(g))) },
        Suite {
            name: "conservation",
            tolerance: 1e-12,
            instances: count,
            run: Box::new(move |g, i| conservation(g, size(i), out_sign)),
        },
        Suite { name: "upwind_rearrangement", tolerance: 1e-12, instances: count, run: Box::new(move |g, i| rearrangement(g, size(i), false)) },
        Suite {
            name: "upwind_rearrangement_vector",
            tolerance: 1e-12,
            instances: count,
            run: Box::new(move |g, i| rearrangement(g, size(i), true)),
        },
        Suite { name: "projection_identities", tolerance: 1e-12, instances: count, run: Box::new(move |g, i| projection_identities(g, size(i))) },
        Suite { name: "mean_matching", tolerance: 1e-14, instances: count, run: Box::new(move |g, i| mean_matching(g, size(i))) },
        Suite { name: "divergence_integral", tolerance: 1e-13, instances: count, run: Box::new(move |g, i| divergence_integral(g, size(i))) },
        Suite { name: "monotonicity", tolerance: 0.0, instances: count, run: Box::new(move |g, i| monotonicity(g, size(i))) },
        Suite {
            name: "energy_identity",
            tolerance: 1e-8,
            instances: opts.energy_instances,
            run: Box::new(move |g, i| energy_identity(g, 2 + i % (e_max - 1))),
        },
    ];
    let results: Vec<SuiteResult> = suites.iter().enumerate().map(|(id, s)| run_suite(id, s, opts.seed)).collect();
    let rates = if opts.include_rates { Some(rates_report(opts.seed)?) } else { None };
    let pass = results.iter().all(|r| r.pass) && rates.as_ref().is_none_or(|r| r.pass);
    Ok(VerifyReport {
        seed: opts.seed,
        instances: count,
        max_n,
        corrupt_flux_sign: opts.corrupt_flux_sign,
        suites: results,
        rates,
        pass,
    })
}
