use std::path::Path;
use std::process::{Command, Output};

fn fefv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fefv")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TINY_VORTEX: &str = r#"
[mesh]
nx = 4
ny = 4

[params]
gamma = 1.4
mu = 0.1
epsilon = 1.5
delta = 0.25
c_dt = 0.5
steps = 5

[initial]
preset = "smooth_vortex"

[output]
formats = ["csv", "vtk"]
stride = 2
matrix_market = true
"#;

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn rest_rows_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "rest.toml",
        "[mesh]\nnx = 5\nny = 3\n[params]\ngamma = 1.4\nmu = 0.1\nepsilon = 1.5\ndelta = 0.25\nsteps = 10\n[initial]\npreset = \"rest\"\n",
    );
    let out_dir = dir.path().join("out");
    let o = fefv(&["run", &cfg, "-o", out_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out_dir.join("diagnostics.csv"));
    assert_eq!(rows.len(), 10);
    // everything but the step index and time is unchanged
    for r in &rows {
        let tail: Vec<&str> = r.iter().skip(2).collect();
        let first: Vec<&str> = rows[0].iter().skip(2).collect();
        assert_eq!(tail, first);
    }
}

#[test]
fn invalid_delta_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        "[mesh]\nnx = 4\nny = 4\n[params]\ngamma = 1.4\nmu = 0.1\nepsilon = 1.5\ndelta = 0.7\nsteps = 2\n[initial]\npreset = \"smooth_vortex\"\n",
    );
    let o = fefv(&["run", &cfg, "-o", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("delta ∈ (0, 1/2)"), "{err}");
}

#[test]
fn unknown_key_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.toml", &TINY_VORTEX.replace("stride = 2", "strid = 2"));
    let o = fefv(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strid"));
}

#[test]
fn tiny_vortex_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "vortex.toml", TINY_VORTEX);
    let out_dir = dir.path().join("out");
    let o = fefv(&["run", &cfg, "-o", out_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out_dir.join("diagnostics.csv"));
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4].get(0), Some("5"));
    for k in [0, 2, 4, 5] {
        let vtk = std::fs::read_to_string(out_dir.join(format!("state_{k:06}.vtk"))).unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(vtk.contains("CELLS 32 128"));
        for name in ["SCALARS rho double 1", "SCALARS theta double 1", "SCALARS p double 1", "VECTORS u_bar double"] {
            assert!(vtk.contains(name), "{name}");
        }
    }
    assert!(!out_dir.join("state_000001.vtk").exists());
    let mtx = std::fs::read_to_string(out_dir.join("transport_k1.mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket matrix coordinate real general\n32 32 "));
}

#[test]
fn exported_mesh_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.vtk");
    let b = dir.path().join("b.vtk");
    for p in [&a, &b] {
        let o = fefv(&["export-mesh", "--nx", "1", "--ny", "1", "-o", p.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.contains("POINTS 4 double"));
    assert!(text.contains("CELLS 2 8"));
    assert!(text.contains("CELL_TYPES 2\n5\n5\n"));
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["verify", "--instances", "40", "--max-n", "6", "--energy-instances", "2", "--no-rates"];
    let good = dir.path().join("good.json");
    let o = fefv(&[&args[..], &["--report", good.to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&good).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    let bad = dir.path().join("bad.json");
    let o = fefv(&[&args[..], &["--corrupt-flux-sign", "--report", bad.to_str().unwrap()]].concat());
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&bad).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
    let suite = report["suites"].as_array().unwrap().iter().find(|s| s["name"] == "conservation").unwrap();
    assert_eq!(suite["pass"], false);
    assert!(suite["offender"]["seed"].as_u64().is_some());
}

#[test]
fn verdicts_do_not_depend_on_the_seed() {
    for seed in 0..10 {
        let o = fefv(&["verify", "--seed", &seed.to_string(), "--instances", "20", "--max-n", "5", "--energy-instances", "1", "--no-rates"]);
        assert!(o.status.success(), "seed {seed}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn convergence_needs_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "vortex.toml", TINY_VORTEX);
    let o = fefv(&["convergence", &cfg, "--levels", "2", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 3 levels"));
}

#[test]
fn small_convergence_study_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "study.toml",
        "[mesh]\nnx = 2\nny = 2\n[params]\ngamma = 1.4\nmu = 0.1\nepsilon = 1.5\ndelta = 0.25\nc_dt = 0.5\nsteps = 2\n[initial]\npreset = \"smooth_vortex\"\n",
    );
    let o = fefv(&["convergence", &cfg, "--levels", "3", "-o", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("convergence.csv"));
    assert_eq!(rows.len(), 3);
    let steps: Vec<&str> = rows.iter().map(|r| r.get(5).unwrap()).collect();
    assert_eq!(steps, ["2", "4", "8"]);
    for r in &rows {
        let control: f64 = r.get(8).unwrap().parse().unwrap();
        assert!(control.abs() <= 1e-11);
    }
}

#[test]
fn project_rates_reports_json() {
    let o = fefv(&["project-rates"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["projection"]["n"].as_array().unwrap().len(), 5);
    assert_eq!(report["poincare"].as_array().unwrap().len(), 4);
}
