use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fefv_core::mesh::Rectangle;
use fefv_core::SimplicialMesh;
use fefv_harness::config::ExperimentConfig;
use fefv_harness::convergence::convergence_study;
use fefv_harness::driver::run_to_directory;
use fefv_harness::output::save_mesh_vtk;
use fefv_harness::rates::rates_report;
use fefv_harness::verify::{verify, VerifyOptions};
use fefv_harness::{io_error, HarnessError, Result};

#[derive(Parser)]
#[command(name = "fefv", version, about = "Mixed FE/FV solver for compressible flow with potential temperature")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write diagnostics.csv and VTK snapshots.
    Run {
        config: PathBuf,
        /// Output directory, overriding output.directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Refinement study: consistency defects and distances between levels.
    Convergence {
        config: PathBuf,
        #[arg(short, long, default_value_t = 3)]
        levels: usize,
        /// Directory for convergence.csv, overriding output.directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Randomized identity suites; prints a JSON report.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 16)]
        max_n: usize,
        #[arg(long, default_value_t = 40)]
        energy_instances: usize,
        /// Skip the projection and Poincaré rate checks.
        #[arg(long)]
        no_rates: bool,
        /// Negative control: break flux conservation on purpose.
        #[arg(long)]
        corrupt_flux_sign: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Projection convergence orders and Poincaré/trace constants.
    ProjectRates {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a structured mesh as legacy VTK.
    ExportMesh {
        /// Take mesh size and domain from this experiment file.
        #[arg(long, conflicts_with_all = ["nx", "ny"])]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        nx: usize,
        #[arg(long, default_value_t = 8)]
        ny: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn load(path: &Path) -> Result<fefv_harness::config::Experiment> {
    ExperimentConfig::load(path)?.resolve()
}

fn emit(json: String, report: Option<PathBuf>) -> Result<()> {
    match report {
        Some(p) => std::fs::write(&p, json).map_err(io_error(&p)),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

/// `Ok(true)` when every check passed.
fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { config, output } => {
            let exp = load(&config)?;
            let dir = output.unwrap_or_else(|| exp.output.directory.clone());
            let s = run_to_directory(&exp, &dir)?;
            let last = s.rows.last();
            eprintln!(
                "{} steps in {:.1} s; mass drift {:.2e} / {:.2e}; energy {:.6e} -> {:.6e}; output in {}",
                s.rows.len(),
                s.seconds,
                s.conservation.mass_drift,
                s.conservation.z_drift,
                s.initial_energy,
                last.map_or(s.initial_energy, |r| r.total_energy),
                dir.display()
            );
            Ok(true)
        }
        Command::Convergence { config, levels, output } => {
            let exp = load(&config)?;
            let dir = output.unwrap_or_else(|| exp.output.directory.clone());
            std::fs::create_dir_all(&dir).map_err(io_error(&dir))?;
            let table = convergence_study(&exp, levels, |r| {
                eprintln!("level {} (n = {}) done: D_rho = {:.4e}, D_Z = {:.4e}", r.level, r.nx, r.defects.rho, r.defects.z)
            })?;
            table.write_csv(&dir.join("convergence.csv"))?;
            print!("{}", table.render());
            Ok(true)
        }
        Command::Verify { seed, instances, max_n, energy_instances, no_rates, corrupt_flux_sign, report } => {
            let opts = VerifyOptions {
                seed,
                instances,
                max_n,
                energy_instances,
                corrupt_flux_sign,
                include_rates: !no_rates,
                ..VerifyOptions::default()
            };
            let r = verify(&opts)?;
            for s in &r.suites {
                eprintln!("{:<28} {} (max {:.2e}, tol {:.0e})", s.name, if s.pass { "pass" } else { "FAIL" }, s.max_discrepancy, s.tolerance);
            }
            emit(r.to_json(), report)?;
            Ok(r.pass)
        }
        Command::ProjectRates { seed, report } => {
            let r = rates_report(seed)?;
            let p = &r.projection;
            eprintln!("{:>4} {:>12} {:>12} {:>12}", "n", "cell L2", "CR L2", "CR grad");
            for i in 0..p.n.len() {
                eprintln!("{:>4} {:>12.4e} {:>12.4e} {:>12.4e}", p.n[i], p.cell_l2[i], p.cr_l2[i], p.cr_grad[i]);
            }
            for f in &r.failures {
                eprintln!("FAIL {f}");
            }
            emit(serde_json::to_string_pretty(&r).expect("report serializes"), report)?;
            Ok(r.pass)
        }
        Command::ExportMesh { config, nx, ny, output } => {
            let mesh = match config {
                Some(c) => load(&c)?.mesh()?,
                None => SimplicialMesh::structured(nx, ny, Rectangle::unit())?,
            };
            save_mesh_vtk(&output, &mesh)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (HarnessError::Config(_) | HarnessError::Parse { .. } | HarnessError::Usage(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprint!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprint!(": {s}");
                src = s.source();
            }
            eprintln!();
            ExitCode::from(1)
        }
    }
}
