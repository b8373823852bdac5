//! Experiment files.
//!
//! TOML with one table per section; every key is flat inside its table:
//!
//! ```toml
//! [mesh]
//! nx = 32
//! ny = 32
//! # x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0 by default
//!
//! [params]
//! gamma = 1.4
//! mu = 0.1
//! epsilon = 1.5
//! delta = 0.25
//! c_dt = 0.5        # or: dt = 0.01
//! steps = 20        # or: T = 0.4
//!
//! [initial]
//! preset = "smooth_vortex"
//! ```
//!
//! Optional sections: `[solver]`, `[output]`, `[diagnostics]`. Unknown keys are
//! rejected. Validation reports every violated constraint at once.

use std::path::{Path, PathBuf};

use fefv_core::mesh::Rectangle;
use fefv_core::scheme::{Linearization, SchemeParams, SolverSettings};
use fefv_core::SimplicialMesh;
use serde::{Deserialize, Serialize};

use crate::presets::Preset;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mesh: MeshSection,
    pub params: ParamsSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "one")]
    pub x1: f64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default = "one")]
    pub y1: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub gamma: f64,
    #[serde(default = "one")]
    pub a: f64,
    pub mu: f64,
    #[serde(default)]
    pub lambda: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub c_dt: Option<f64>,
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t_final: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol_nl: f64,
    pub tol_lin: f64,
    pub max_picard: usize,
    pub relax: f64,
    pub homotopy_steps: usize,
    /// "newton" or "picard".
    pub linearization: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverSettings::default();
        SolverSection {
            tol_nl: d.tol_nl,
            tol_lin: d.tol_lin,
            max_picard: d.max_picard,
            relax: d.relax,
            homotopy_steps: d.homotopy_steps,
            linearization: "newton".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// rest, smooth_vortex, gaussian_bump or custom.
    pub preset: String,
    /// Strict temperature bounds the projected data must respect; each
    /// preset has its own default.
    pub theta_min: Option<f64>,
    pub theta_max: Option<f64>,
    /// Custom preset: quadratic coefficients `[1, x, y, x², xy, y²]` in
    /// coordinates normalized to the unit square.
    pub rho: Option<[f64; 6]>,
    pub theta: Option<[f64; 6]>,
    /// Custom preset: velocity components are these quadratics times the
    /// boundary bubble `x(1-x)y(1-y)`.
    pub u: Option<[f64; 6]>,
    pub v: Option<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Write a VTK snapshot every `stride` steps (plus the first and last
    /// level); 0 writes only those two.
    pub stride: usize,
    /// Subset of {"csv", "vtk"}.
    pub formats: Vec<String>,
    /// Dump the transport operator of the first step in MatrixMarket format.
    pub matrix_market: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: PathBuf::from("output"), stride: 0, formats: vec!["csv".into()], matrix_market: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    /// Random nonnegative test functions per step for the entropy check,
    /// on top of the constant one.
    pub entropy_samples: usize,
    pub seed: u64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection { entropy_samples: 5, seed: 0 }
    }
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub nx: usize,
    pub ny: usize,
    pub domain: Rectangle,
    pub params: SchemeParams,
    /// `Some(c)` when `Δt = c h`.
    pub c_dt: Option<f64>,
    pub settings: SolverSettings,
    pub preset: Preset,
    pub theta_bounds: (f64, f64),
    pub output: OutputSection,
    pub diagnostics: DiagnosticsSection,
}

impl Experiment {
    pub fn mesh(&self) -> Result<SimplicialMesh> {
        Ok(SimplicialMesh::structured(self.nx, self.ny, self.domain)?)
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::io_error(path))?;
        Self::from_toml(&text).map_err(|message| HarnessError::Parse { path: path.to_path_buf(), message })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every constraint and derives the scheme inputs.
    pub fn resolve(&self) -> Result<Experiment> {
        let mut errors = Vec::new();
        let m = &self.mesh;
        if m.nx == 0 || m.ny == 0 {
            errors.push("mesh.nx and mesh.ny must be >= 1".to_string());
        }
        let domain = match Rectangle::new(m.x0, m.x1, m.y0, m.y1) {
            Ok(r) => Some(r),
            Err(e) => {
                errors.push(format!("mesh domain: {e}"));
                None
            }
        };
        let h = match (domain, m.nx > 0 && m.ny > 0) {
            (Some(d), true) => {
                let (hx, hy) = ((d.x1 - d.x0) / m.nx as f64, (d.y1 - d.y0) / m.ny as f64);
                Some(hx.hypot(hy))
            }
            _ => None,
        };

        let p = &self.params;
        let dt = match (p.dt, p.c_dt) {
            (Some(_), Some(_)) => {
                errors.push("give either params.dt or params.c_dt, not both".into());
                None
            }
            (Some(dt), None) => Some(dt),
            (None, c) => {
                let c = c.unwrap_or(0.5);
                if !(c > 0.0) {
                    errors.push("c_dt > 0".into());
                }
                h.map(|h| c * h)
            }
        };
        let t_final = match (p.t_final, p.steps, dt) {
            (Some(_), Some(_), _) => {
                errors.push("give either params.T or params.steps, not both".into());
                None
            }
            (Some(t), None, _) => Some(t),
            (None, Some(0), _) => {
                errors.push("params.steps >= 1".into());
                None
            }
            (None, Some(n), Some(dt)) => Some(n as f64 * dt),
            (None, None, _) => {
                errors.push("params.T or params.steps is required".into());
                None
            }
            _ => None,
        };
        let params = SchemeParams {
            gamma: p.gamma,
            a: p.a,
            mu: p.mu,
            lambda: p.lambda,
            epsilon: p.epsilon,
            delta: p.delta,
            dt: dt.unwrap_or(f64::NAN),
            t_final: t_final.unwrap_or(f64::NAN),
        };
        if dt.is_some() && t_final.is_some() {
            errors.extend(params.violations());
        } else {
            let mut probe = params.clone();
            probe.dt = 1.0;
            probe.t_final = 1.0;
            errors.extend(probe.violations());
        }

        let s = &self.solver;
        let linearization = match s.linearization.as_str() {
            "newton" => Linearization::Newton,
            "picard" => Linearization::Picard,
            other => {
                errors.push(format!("solver.linearization must be \"newton\" or \"picard\", got \"{other}\""));
                Linearization::Newton
            }
        };
        let settings = SolverSettings {
            tol_nl: s.tol_nl,
            max_picard: s.max_picard,
            relax: s.relax,
            tol_lin: s.tol_lin,
            homotopy_steps: s.homotopy_steps,
            linearization,
        };
        errors.extend(settings.violations());

        let (preset, theta_bounds) = match Preset::from_section(&self.initial) {
            Ok(p) => {
                let d = p.default_theta_bounds();
                let b = (self.initial.theta_min.unwrap_or(d.0), self.initial.theta_max.unwrap_or(d.1));
                if !(0.0 < b.0 && b.0 < b.1) {
                    errors.push("initial temperature bounds need 0 < theta_min < theta_max".into());
                }
                (Some(p), b)
            }
            Err(mut e) => {
                errors.append(&mut e);
                (None, (0.0, 0.0))
            }
        };

        for f in &self.output.formats {
            if f != "csv" && f != "vtk" {
                errors.push(format!("output.formats: unknown format \"{f}\" (expected csv or vtk)"));
            }
        }

        if !errors.is_empty() {
            return Err(HarnessError::Config(errors));
        }
        Ok(Experiment {
            nx: m.nx,
            ny: m.ny,
            domain: domain.expect("checked"),
            params,
            c_dt: if p.dt.is_some() { None } else { Some(p.c_dt.unwrap_or(0.5)) },
            settings,
            preset: preset.expect("checked"),
            theta_bounds,
            output: self.output.clone(),
            diagnostics: self.diagnostics.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        [mesh]
        nx = 4
        ny = 4
        [params]
        gamma = 1.4
        mu = 0.1
        epsilon = 1.5
        delta = 0.25
        c_dt = 0.5
        steps = 3
        [initial]
        preset = "smooth_vortex"
    "#;

    #[test]
    fn minimal_file_resolves() {
        let e = ExperimentConfig::from_toml(BASE).unwrap().resolve().unwrap();
        let h = 2f64.sqrt() / 4.0;
        assert!((e.params.dt - 0.5 * h).abs() < 1e-15);
        assert_eq!(e.params.steps().unwrap(), 3);
        assert_eq!(e.theta_bounds, (0.8, 1.2));
        assert_eq!(e.settings, SolverSettings::default());
        assert!(e.wants("csv") && !e.wants("vtk"));
    }

    #[test]
    fn every_violation_is_reported() {
        let text = BASE.replace("delta = 0.25", "delta = 0.7").replace("epsilon = 1.5", "epsilon = 0.9")
            + "[solver]\nrelax = 1.5\n[output]\nformats = [\"csv\", \"png\"]\n";
        let err = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap_err();
        let HarnessError::Config(list) = &err else { panic!("{err}") };
        for needle in ["delta ∈ (0, 1/2)", "epsilon > 1", "relax ∈ (0, 1]", "png"] {
            assert!(list.iter().any(|m| m.contains(needle)), "{needle} missing from {list:?}");
        }
        assert!(err.to_string().contains("delta ∈ (0, 1/2)"));
    }

    #[test]
    fn conflicting_time_keys() {
        let text = BASE.replace("steps = 3", "steps = 3\nT = 1.0");
        assert!(ExperimentConfig::from_toml(&text).unwrap().resolve().is_err());
        let text = BASE.replace("c_dt = 0.5", "dt = 0.1").replace("steps = 3", "T = 0.25");
        let err = ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("T / dt must be a positive integer"));
        let text = BASE.replace("c_dt = 0.5", "dt = 0.1").replace("steps = 3", "T = 0.3");
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap().params.steps().unwrap(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml(&BASE.replace("nx = 4", "nx = 4\nnz = 2")).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
