//! Acceptance criteria 1-12, run one after another (timings are part of the
//! criteria) with one PASS/FAIL line each. Exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use fefv_core::State;
use fefv_harness::config::{Experiment, ExperimentConfig};
use fefv_harness::convergence::convergence_study;
use fefv_harness::driver::{run_to_directory, RunSummary};
use fefv_harness::rates::{rates_report, POINCARE_GROWTH};
use fefv_harness::verify::{verify, VerifyOptions};

struct Line {
    id: usize,
    pass: bool,
    detail: String,
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn experiment(name: &str) -> Experiment {
    ExperimentConfig::load(&config_path(name)).and_then(|c| c.resolve()).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// `prev_energy` for each row: the initial energy, then the row before.
fn previous_energies(s: &RunSummary) -> Vec<f64> {
    std::iter::once(s.initial_energy).chain(s.rows.iter().map(|r| r.total_energy)).take(s.rows.len()).collect()
}

fn entropy_ok(s: &RunSummary) -> (bool, f64) {
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for (r, e) in s.rows.iter().zip(previous_energies(s)) {
        let scaled = r.entropy_margin_min / (e + 1.0);
        worst = worst.min(scaled);
        ok &= r.entropy_margin_min >= -1e-10 * (e + 1.0);
    }
    (ok, worst)
}

fn same_bits(a: &State, b: &State) -> bool {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let ubits = |s: &State| s.u.values.iter().flat_map(|v| [v[0].to_bits(), v[1].to_bits()]).collect::<Vec<_>>();
    bits(&a.rho.values) == bits(&b.rho.values)
        && bits(&a.theta.values) == bits(&b.theta.values)
        && bits(&a.z.values) == bits(&b.z.values)
        && ubits(a) == ubits(b)
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut lines: Vec<Line> = Vec::new();
    let mut report = |id: usize, pass: bool, detail: String| {
        println!("criterion {id:>2} {} {detail}", if pass { "PASS" } else { "FAIL" });
        lines.push(Line { id, pass, detail });
    };

    // 1-3, 5: smooth vortex on 64x64, 100 steps
    let vortex = experiment("smooth_vortex_64.toml");
    let first_dir = scratch.path().join("vortex_a");
    match run_to_directory(&vortex, &first_dir) {
        Err(e) => {
            for id in [1, 2, 3, 5, 12] {
                report(id, false, format!("smooth vortex run failed: {e}"));
            }
        }
        Ok(s) => {
            let c = s.conservation;
            report(
                1,
                c.mass_drift <= 1e-10 && c.z_drift <= 1e-10 && s.seconds <= 120.0 && s.rows.len() == 100,
                format!(
                    "conservation: relative drift of mass {:.2e}, of rho*theta {:.2e} (limit 1e-10); {} steps in {:.1} s (limit 120 s)",
                    c.mass_drift,
                    c.z_drift,
                    s.rows.len(),
                    s.seconds
                ),
            );
            let (lo, hi) = vortex.theta_bounds;
            report(
                2,
                c.min_rho > 0.0 && c.min_theta >= lo - 1e-10 && c.max_theta <= hi + 1e-10,
                format!(
                    "positivity and bounds: min rho {:.6}, theta in [{:.12}, {:.12}] (allowed [{lo}, {hi}] +- 1e-10)",
                    c.min_rho, c.min_theta, c.max_theta
                ),
            );
            let tol = 10.0 * vortex.settings.tol_nl;
            let max_inc = s.rows.iter().map(|r| r.energy_increment).fold(f64::NEG_INFINITY, f64::max);
            report(3, max_inc <= tol, format!("energy monotonicity: max E^k - E^(k-1) = {max_inc:.3e} (limit {tol:.0e})"));

            let gamma2 = experiment("gamma2_32.toml");
            let g2 = run_to_directory(&gamma2, &scratch.path().join("gamma2"));
            let random_steps = verify(&VerifyOptions { include_rates: false, instances: 0, ..VerifyOptions::default() });
            match (&g2, &random_steps) {
                (Ok(g), Ok(v)) => {
                    let limit = 1e-8f64.max(10.0 * gamma2.settings.tol_nl);
                    let worst = g.rows.iter().map(|r| r.energy_residual).fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x) });
                    let suite = v.suite("energy_identity").expect("energy suite");
                    report(
                        4,
                        worst <= limit && g.rows.len() == 50 && suite.pass,
                        format!(
                            "gamma = 2 energy balance: max relative residual {worst:.3e} over {} steps (limit {limit:.0e}); {} random single steps, max {:.3e}",
                            g.rows.len(),
                            suite.instances,
                            suite.max_discrepancy
                        ),
                    );
                    let (ok_a, worst_a) = entropy_ok(&s);
                    let (ok_b, worst_b) = entropy_ok(g);
                    report(
                        5,
                        ok_a && ok_b,
                        format!(
                            "entropy inequality: min margin / (E^(k-1) + 1) = {worst_a:.3e} (gamma 1.4), {worst_b:.3e} (gamma 2); limit -1e-10, psi = 1 and {} random psi per step",
                            vortex.diagnostics.entropy_samples
                        ),
                    );
                }
                (Err(e), _) => {
                    report(4, false, format!("gamma = 2 run failed: {e}"));
                    report(5, false, format!("gamma = 2 run failed: {e}"));
                }
                (_, Err(e)) => {
                    report(4, false, format!("random-step suite failed: {e}"));
                    report(5, entropy_ok(&s).0, "entropy inequality: gamma = 2 run unavailable".into());
                }
            }

            let again = scratch.path().join("vortex_b");
            let identical = run_to_directory(&vortex, &again).ok().and_then(|_| {
                let a = std::fs::read(first_dir.join("diagnostics.csv")).ok()?;
                let b = std::fs::read(again.join("diagnostics.csv")).ok()?;
                Some((a == b, a.len()))
            });
            match identical {
                Some((same, len)) => report(12, same, format!("determinism: repeated run's diagnostics CSV ({len} bytes) {}", if same { "is bit-identical" } else { "differs" })),
                None => report(12, false, "determinism: repeated run failed".into()),
            }
        }
    }

    // 6: identity suites
    let t = Instant::now();
    match verify(&VerifyOptions { include_rates: false, energy_instances: 0, ..VerifyOptions::default() }) {
        Ok(v) => {
            let secs = t.elapsed().as_secs_f64();
            let failed: Vec<String> = v.suites.iter().filter(|s| s.instances > 0 && !s.pass).map(|s| s.name.to_string()).collect();
            let worst = v.suites.iter().filter(|s| s.instances > 0).map(|s| s.max_discrepancy).fold(0.0f64, f64::max);
            report(
                6,
                failed.is_empty() && worst <= 1e-12 && secs <= 60.0,
                format!(
                    "identity suites: {} instances each on meshes up to {}x{}, max discrepancy {worst:.2e} (limit 1e-12), {secs:.1} s{}",
                    v.instances,
                    v.max_n,
                    v.max_n,
                    if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) }
                ),
            );
        }
        Err(e) => report(6, false, format!("identity suites failed to run: {e}")),
    }

    // 7, 8: projection rates and Poincaré ratios
    match rates_report(0) {
        Ok(r) => {
            let p = &r.projection;
            let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
            report(
                7,
                p.failures().is_empty() && p.n.len() == 5,
                format!(
                    "projection rates over {} refinements: min EOC cell L2 {:.3} (>= 0.9), CR L2 {:.3} (>= 1.9), CR gradient {:.3} (>= 0.9)",
                    p.n.len() - 1,
                    min(&p.eoc_cell_l2),
                    min(&p.eoc_cr_l2),
                    min(&p.eoc_cr_grad)
                ),
            );
            let growth: Vec<f64> = r.poincare[1..].iter().map(|row| row.growth).collect();
            report(
                8,
                growth.len() == 3 && growth.iter().all(|g| *g <= POINCARE_GROWTH),
                format!(
                    "Poincaré: max ratio {} over n = {}, growth per refinement {:?} (limit {POINCARE_GROWTH})",
                    r.poincare.iter().map(|row| format!("{:.4}", row.max_ratio)).collect::<Vec<_>>().join(", "),
                    r.poincare.iter().map(|row| row.n.to_string()).collect::<Vec<_>>().join(", "),
                    growth.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>()
                ),
            );
        }
        Err(e) => {
            report(7, false, format!("rates failed: {e}"));
            report(8, false, format!("rates failed: {e}"));
        }
    }

    // 9, 10: refinement study
    let base = experiment("convergence.toml");
    let t = Instant::now();
    match convergence_study(&base, 3, |_| {}) {
        Ok(table) => {
            let secs = t.elapsed().as_secs_f64();
            let rows = &table.rows;
            let decreasing = rows.windows(2).all(|w| {
                w[1].defects.rho.abs() < w[0].defects.rho.abs() && w[1].defects.z.abs() < w[0].defects.z.abs()
            });
            let eocs = table.defect_eoc();
            let eoc_ok = eocs.iter().all(|(a, b)| *a > 0.2 && *b > 0.2);
            let control = rows.iter().map(|r| r.defects.rho_control.abs().max(r.defects.z_control.abs())).fold(0.0f64, f64::max);
            report(
                9,
                decreasing && eoc_ok && control <= 1e-11 && secs <= 600.0,
                format!(
                    "consistency: |D_rho| {}, |D_Z| {}, EOC {:?} (> 0.2), control {control:.2e} (<= 1e-11), {secs:.1} s",
                    rows.iter().map(|r| format!("{:.3e}", r.defects.rho.abs())).collect::<Vec<_>>().join(" > "),
                    rows.iter().map(|r| format!("{:.3e}", r.defects.z.abs())).collect::<Vec<_>>().join(" > "),
                    eocs.iter().map(|(a, b)| ((a * 1e3).round() / 1e3, (b * 1e3).round() / 1e3)).collect::<Vec<_>>()
                ),
            );
            let ratios = table.distance_ratios();
            report(
                10,
                !ratios.is_empty() && ratios.iter().all(|r| r.iter().all(|x| *x <= 0.8)),
                format!(
                    "Cauchy distances: rho {}, rho*theta {}, u_bar {}; ratios {:?} (<= 0.8)",
                    rows[1..].iter().map(|r| format!("{:.3e}", r.dist_rho)).collect::<Vec<_>>().join(" -> "),
                    rows[1..].iter().map(|r| format!("{:.3e}", r.dist_z)).collect::<Vec<_>>().join(" -> "),
                    rows[1..].iter().map(|r| format!("{:.3e}", r.dist_u_bar)).collect::<Vec<_>>().join(" -> "),
                    ratios.iter().map(|r| r.map(|x| (x * 1e4).round() / 1e4)).collect::<Vec<_>>()
                ),
            );
        }
        Err(e) => {
            report(9, false, format!("refinement study failed: {e}"));
            report(10, false, format!("refinement study failed: {e}"));
        }
    }

    // 11: rest state under several parameter sets
    let mut rest_ok = true;
    let mut sets = 0;
    let cfg = ExperimentConfig::load(&config_path("rest.toml")).expect("rest config");
    for (gamma, mu, lambda, epsilon, delta) in [(1.4, 0.1, 0.0, 1.5, 0.25), (2.0, 1.0, 0.5, 1.2, 0.1), (3.0, 0.01, 0.0, 1.9, 0.45)] {
        let mut c = cfg.clone();
        c.params.gamma = gamma;
        c.params.mu = mu;
        c.params.lambda = lambda;
        c.params.epsilon = epsilon;
        c.params.delta = delta;
        let exp = c.resolve().expect("rest parameters are admissible");
        let initial = exp.mesh().and_then(|m| exp.preset.initial_state(&m, &exp.domain, exp.theta_bounds)).expect("rest state");
        match run_to_directory(&exp, &scratch.path().join(format!("rest{sets}"))) {
            Ok(s) => {
                rest_ok &= same_bits(&s.final_state, &initial)
                    && s.rows.len() == 10
                    && s.rows.iter().all(|r| r.picard_iters == 0 && r.nl_residual == 0.0);
            }
            Err(_) => rest_ok = false,
        }
        sets += 1;
    }
    report(11, rest_ok, format!("rest state: {sets} parameter sets, 10 steps each, final state bit-identical and zero residual at iterate 0"));

    lines.sort_by_key(|l| l.id);
    let failed: Vec<&Line> = lines.iter().filter(|l| !l.pass).collect();
    println!("acceptance: {} of {} criteria pass", lines.len() - failed.len(), lines.len());
    for l in &failed {
        println!("  failed {}: {}", l.id, l.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
