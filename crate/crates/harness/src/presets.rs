//! Initial data. All presets are written in coordinates normalized to the
//! unit square, so they keep the no-slip property on any rectangle.

use std::f64::consts::PI;

use fefv_core::mesh::{Point, Rectangle};
use fefv_core::scheme::{discrete_initial_data, State};
use fefv_core::SimplicialMesh;

use crate::config::InitialSection;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Rest,
    SmoothVortex,
    GaussianBump,
    /// Quadratics in `[1, x, y, x², xy, y²]`; the velocity components are
    /// multiplied by the bubble `x(1-x)y(1-y)`.
    Custom { rho: [f64; 6], theta: [f64; 6], u: [f64; 6], v: [f64; 6] },
}

fn quadratic(c: &[f64; 6], x: Point) -> f64 {
    c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[0] * x[0] + c[4] * x[0] * x[1] + c[5] * x[1] * x[1]
}

impl Preset {
    pub fn from_section(s: &InitialSection) -> std::result::Result<Self, Vec<String>> {
        let custom_keys = [s.rho.is_some(), s.theta.is_some(), s.u.is_some(), s.v.is_some()];
        match s.preset.as_str() {
            "custom" => {
                let missing: Vec<String> = ["rho", "theta"]
                    .iter()
                    .zip(&custom_keys)
                    .filter(|(_, &given)| !given)
                    .map(|(k, _)| format!("initial.{k} is required for the custom preset"))
                    .collect();
                if !missing.is_empty() {
                    return Err(missing);
                }
                Ok(Preset::Custom {
                    rho: s.rho.unwrap(),
                    theta: s.theta.unwrap(),
                    u: s.u.unwrap_or([0.0; 6]),
                    v: s.v.unwrap_or([0.0; 6]),
                })
            }
            name => {
                let p = match name {
                    "rest" => Preset::Rest,
                    "smooth_vortex" => Preset::SmoothVortex,
                    "gaussian_bump" => Preset::GaussianBump,
                    other => {
                        return Err(vec![format!(
                            "initial.preset must be rest, smooth_vortex, gaussian_bump or custom, got \"{other}\""
                        )])
                    }
                };
                if custom_keys.iter().any(|&b| b) {
                    return Err(vec![format!("initial.rho/theta/u/v only apply to the custom preset, not {name}")]);
                }
                Ok(p)
            }
        }
    }

    /// `(c_*, c^*)` with `c_* < θ₀ < c^*` for the projected data.
    pub fn default_theta_bounds(&self) -> (f64, f64) {
        match self {
            Preset::Rest => (0.5, 2.0),
            Preset::SmoothVortex => (0.8, 1.2),
            Preset::GaussianBump => (0.9, 1.2),
            Preset::Custom { .. } => (0.1, 10.0),
        }
    }

    pub fn rho(&self, x: Point) -> f64 {
        match self {
            Preset::Rest => 1.0,
            Preset::SmoothVortex => 1.0 + 0.2 * (PI * x[0]).sin() * (PI * x[1]).sin(),
            Preset::GaussianBump => 1.0 + 0.3 * bump(x),
            Preset::Custom { rho, .. } => quadratic(rho, x),
        }
    }

    pub fn theta(&self, x: Point) -> f64 {
        match self {
            Preset::Rest => 1.0,
            Preset::SmoothVortex => 1.0 + 0.2 * (PI * x[0]).cos() * (PI * x[1]).cos(),
            Preset::GaussianBump => 1.0 + 0.1 * bump(x),
            Preset::Custom { theta, .. } => quadratic(theta, x),
        }
    }

    pub fn velocity(&self, x: Point) -> [f64; 2] {
        match self {
            Preset::Rest | Preset::GaussianBump => [0.0, 0.0],
            Preset::SmoothVortex => {
                let (sx, sy) = ((PI * x[0]).sin(), (PI * x[1]).sin());
                [0.1 * sx * sx * (2.0 * PI * x[1]).sin(), -0.1 * (2.0 * PI * x[0]).sin() * sy * sy]
            }
            Preset::Custom { u, v, .. } => {
                let b = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
                [b * quadratic(u, x), b * quadratic(v, x)]
            }
        }
    }

    /// Projected initial state on `mesh`, checked against `theta_bounds`.
    pub fn initial_state(&self, mesh: &SimplicialMesh, domain: &Rectangle, theta_bounds: (f64, f64)) -> Result<State> {
        let to_unit = |x: Point| [(x[0] - domain.x0) / (domain.x1 - domain.x0), (x[1] - domain.y0) / (domain.y1 - domain.y0)];
        if *self == Preset::Rest {
            return Ok(State::rest(mesh));
        }
        Ok(discrete_initial_data(
            mesh,
            |x| self.rho(to_unit(x)),
            |x| self.theta(to_unit(x)),
            |x| self.velocity(to_unit(x)),
            theta_bounds,
        )?)
    }
}

fn bump(x: Point) -> f64 {
    let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
    (-40.0 * r2).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_fit_their_bounds() {
        for p in [Preset::Rest, Preset::SmoothVortex, Preset::GaussianBump] {
            let m = SimplicialMesh::unit_square(8).unwrap();
            let s = p.initial_state(&m, &Rectangle::unit(), p.default_theta_bounds()).unwrap();
            assert!(s.rho.min() > 0.0);
            assert!(s.u.vanishes_on_boundary(&m));
        }
        let v = Preset::SmoothVortex;
        for x in [[0.0, 0.3], [1.0, 0.7], [0.2, 0.0], [0.6, 1.0]] {
            let u = v.velocity(x);
            assert!(u[0].abs() < 1e-16 && u[1].abs() < 1e-16);
        }
    }

    #[test]
    fn custom_preset_needs_density_and_temperature() {
        let s = InitialSection { preset: "custom".into(), theta_min: None, theta_max: None, rho: None, theta: None, u: None, v: None };
        assert_eq!(Preset::from_section(&s).unwrap_err().len(), 2);
        let s = InitialSection { rho: Some([1.0, 0.1, 0.0, 0.0, 0.0, 0.0]), theta: Some([1.0; 6]), ..s };
        let p = Preset::from_section(&s).unwrap();
        assert!((p.rho([1.0, 0.0]) - 1.1).abs() < 1e-15);
        assert_eq!(p.velocity([0.5, 0.5]), [0.0, 0.0]);
    }

    #[test]
    fn rest_on_a_shifted_domain() {
        let d = Rectangle::new(-1.0, 2.0, 0.5, 1.5).unwrap();
        let m = SimplicialMesh::structured(3, 2, d).unwrap();
        assert_eq!(Preset::Rest.initial_state(&m, &d, (0.5, 2.0)).unwrap(), State::rest(&m));
    }
}
