//! Piecewise constants, Crouzeix-Raviart fields, projections and traces.
//!
//! A Crouzeix-Raviart coefficient is the mean of the function over its face,
//! which for an affine function is its value at the edge midpoint. On a
//! triangle the three midpoints average to the barycenter, so the cell mean
//! is the plain average of the three coefficients.

use crate::mesh::{Point, SimplicialMesh};
use crate::quadrature::{element_points, face_points, integrate_element, integrate_face, EDGE_POINTS};

pub type Vector2 = [f64; 2];
/// `g[i][j] = d u_i / d x_j`.
pub type Tensor2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub values: Vec<f64>,
}

impl CellField {
    pub fn constant(mesh: &SimplicialMesh, c: f64) -> Self {
        CellField { values: vec![c; mesh.n_elements()] }
    }

    pub fn from_fn(mesh: &SimplicialMesh, f: impl Fn(usize) -> f64) -> Self {
        CellField { values: (0..mesh.n_elements()).map(f).collect() }
    }

    pub fn integral(&self, mesh: &SimplicialMesh) -> f64 {
        mesh.elements.iter().zip(&self.values).map(|(e, v)| e.volume * v).sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lp_norm(&self, mesh: &SimplicialMesh, p: f64) -> f64 {
        if p.is_infinite() {
            return self.values.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        let s: f64 =
            mesh.elements.iter().zip(&self.values).map(|(e, v)| e.volume * v.abs().powf(p)).sum();
        s.powf(1.0 / p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrScalarField {
    pub values: Vec<f64>,
    pub boundary_constrained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrVectorField {
    pub values: Vec<Vector2>,
    pub boundary_constrained: bool,
}

impl CrScalarField {
    pub fn zeros(mesh: &SimplicialMesh, boundary_constrained: bool) -> Self {
        CrScalarField { values: vec![0.0; mesh.n_faces()], boundary_constrained }
    }

    /// Affine restriction to element `k` evaluated at `x`.
    pub fn eval(&self, mesh: &SimplicialMesh, k: usize, x: Point) -> f64 {
        let e = &mesh.elements[k];
        let g = self.gradient_on(mesh, k);
        let mean = e.faces.iter().map(|&f| self.values[f]).sum::<f64>() / 3.0;
        mean + g[0] * (x[0] - e.barycenter[0]) + g[1] * (x[1] - e.barycenter[1])
    }

    pub fn gradient_on(&self, mesh: &SimplicialMesh, k: usize) -> Vector2 {
        let e = &mesh.elements[k];
        let mut g = [0.0; 2];
        for &f in &e.faces {
            let n = mesh.outward_normal(f, k);
            let s = mesh.faces[f].measure * self.values[f];
            g[0] += s * n[0];
            g[1] += s * n[1];
        }
        [g[0] / e.volume, g[1] / e.volume]
    }
}

impl CrVectorField {
    pub fn zeros(mesh: &SimplicialMesh, boundary_constrained: bool) -> Self {
        CrVectorField { values: vec![[0.0; 2]; mesh.n_faces()], boundary_constrained }
    }

    pub fn component(&self, i: usize) -> CrScalarField {
        CrScalarField {
            values: self.values.iter().map(|v| v[i]).collect(),
            boundary_constrained: self.boundary_constrained,
        }
    }

    /// True when every exterior coefficient is exactly zero.
    pub fn vanishes_on_boundary(&self, mesh: &SimplicialMesh) -> bool {
        mesh.faces
            .iter()
            .zip(&self.values)
            .all(|(f, v)| f.is_interior() || (v[0] == 0.0 && v[1] == 0.0))
    }

    /// Zeroes exterior coefficients and marks the field as constrained.
    pub fn constrain(&mut self, mesh: &SimplicialMesh) {
        for (f, v) in mesh.faces.iter().zip(self.values.iter_mut()) {
            if !f.is_interior() {
                *v = [0.0; 2];
            }
        }
        self.boundary_constrained = true;
    }

    /// Normal velocity `⟨u·n⟩` on face `f` in the direction of `n_σ`.
    pub fn normal_flux(&self, mesh: &SimplicialMesh, f: usize) -> f64 {
        let n = mesh.faces[f].normal;
        self.values[f][0] * n[0] + self.values[f][1] * n[1]
    }

    pub fn gradient_on(&self, mesh: &SimplicialMesh, k: usize) -> Tensor2 {
        let e = &mesh.elements[k];
        let mut g = [[0.0; 2]; 2];
        for &f in &e.faces {
            let n = mesh.outward_normal(f, k);
            let s = mesh.faces[f].measure / e.volume;
            for i in 0..2 {
                for j in 0..2 {
                    g[i][j] += s * self.values[f][i] * n[j];
                }
            }
        }
        g
    }

    pub fn divergence_on(&self, mesh: &SimplicialMesh, k: usize) -> f64 {
        let e = &mesh.elements[k];
        let mut d = 0.0;
        for &f in &e.faces {
            let n = mesh.outward_normal(f, k);
            let v = self.values[f];
            d += mesh.faces[f].measure * (v[0] * n[0] + v[1] * n[1]);
        }
        d / e.volume
    }

    pub fn cell_average_on(&self, mesh: &SimplicialMesh, k: usize) -> Vector2 {
        let [a, b, c] = mesh.elements[k].faces.map(|f| self.values[f]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn eval(&self, mesh: &SimplicialMesh, k: usize, x: Point) -> Vector2 {
        let m = self.cell_average_on(mesh, k);
        let g = self.gradient_on(mesh, k);
        let dx = [x[0] - mesh.elements[k].barycenter[0], x[1] - mesh.elements[k].barycenter[1]];
        [
            m[0] + g[0][0] * dx[0] + g[0][1] * dx[1],
            m[1] + g[1][0] * dx[0] + g[1][1] * dx[1],
        ]
    }
}

/// Values on both sides of a face. `out` is zero on exterior faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceTracePair<T> {
    pub face: usize,
    pub in_value: T,
    pub out_value: T,
}

impl FaceTracePair<f64> {
    pub fn jump(&self) -> f64 {
        self.out_value - self.in_value
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.out_value + self.in_value)
    }
}

impl FaceTracePair<Vector2> {
    pub fn jump(&self) -> Vector2 {
        [self.out_value[0] - self.in_value[0], self.out_value[1] - self.in_value[1]]
    }

    pub fn mean(&self) -> Vector2 {
        [
            0.5 * (self.out_value[0] + self.in_value[0]),
            0.5 * (self.out_value[1] + self.in_value[1]),
        ]
    }
}

pub fn cell_traces(mesh: &SimplicialMesh, r: &[f64], f: usize) -> FaceTracePair<f64> {
    let face = &mesh.faces[f];
    FaceTracePair {
        face: f,
        in_value: r[face.in_element],
        out_value: face.out_element.map_or(0.0, |k| r[k]),
    }
}

pub fn cell_vector_traces(mesh: &SimplicialMesh, r: &[Vector2], f: usize) -> FaceTracePair<Vector2> {
    let face = &mesh.faces[f];
    FaceTracePair {
        face: f,
        in_value: r[face.in_element],
        out_value: face.out_element.map_or([0.0; 2], |k| r[k]),
    }
}

/// Point traces of a Crouzeix-Raviart field at `x` on face `f`.
pub fn cr_traces_at(mesh: &SimplicialMesh, v: &CrScalarField, f: usize, x: Point) -> FaceTracePair<f64> {
    let face = &mesh.faces[f];
    FaceTracePair {
        face: f,
        in_value: v.eval(mesh, face.in_element, x),
        out_value: face.out_element.map_or(0.0, |k| v.eval(mesh, k, x)),
    }
}

/// Face means of the traces from each side, integrated with the edge rule.
///
/// Points are taken relative to the face's first vertex rather than in
/// absolute coordinates; the gradient scales like `1/h`, so absolute
/// rounding would grow with refinement.
pub fn cr_face_means(mesh: &SimplicialMesh, v: &CrScalarField, f: usize) -> FaceTracePair<f64> {
    let face = &mesh.faces[f];
    let [p, q] = face.vertices.map(|i| mesh.vertices[i]);
    let m = |k: usize| {
        let e = &mesh.elements[k];
        let g = v.gradient_on(mesh, k);
        let mean = e.faces.iter().map(|&s| v.values[s]).sum::<f64>() / 3.0;
        // p minus the barycenter, from vertex differences
        let mut d = [0.0; 2];
        for a in e.vertices.map(|i| mesh.vertices[i]) {
            d[0] += (p[0] - a[0]) / 3.0;
            d[1] += (p[1] - a[1]) / 3.0;
        }
        let at_p = mean + g[0] * d[0] + g[1] * d[1];
        let t = [q[0] - p[0], q[1] - p[1]];
        EDGE_POINTS.iter().map(|&(s, w)| w * (at_p + s * (g[0] * t[0] + g[1] * t[1]))).sum::<f64>()
    };
    FaceTracePair {
        face: f,
        in_value: m(face.in_element),
        out_value: face.out_element.map_or(0.0, m),
    }
}

pub fn project_cell(mesh: &SimplicialMesh, f: impl Fn(Point) -> f64) -> CellField {
    CellField::from_fn(mesh, |k| integrate_element(mesh, k, &f) / mesh.elements[k].volume)
}

pub fn project_cr_scalar(
    mesh: &SimplicialMesh,
    f: impl Fn(Point) -> f64,
    boundary_constrained: bool,
) -> CrScalarField {
    let mut values: Vec<f64> = (0..mesh.n_faces())
        .map(|s| integrate_face(mesh, s, &f) / mesh.faces[s].measure)
        .collect();
    if boundary_constrained {
        for (face, v) in mesh.faces.iter().zip(values.iter_mut()) {
            if !face.is_interior() {
                *v = 0.0;
            }
        }
    }
    CrScalarField { values, boundary_constrained }
}

pub fn project_cr_vector(
    mesh: &SimplicialMesh,
    f: impl Fn(Point) -> Vector2,
    boundary_constrained: bool,
) -> CrVectorField {
    let mut out = CrVectorField { values: Vec::with_capacity(mesh.n_faces()), boundary_constrained: false };
    for s in 0..mesh.n_faces() {
        let mut acc = [0.0; 2];
        for (x, w) in face_points(mesh, s) {
            let v = f(x);
            acc[0] += w * v[0];
            acc[1] += w * v[1];
        }
        let m = mesh.faces[s].measure;
        out.values.push([acc[0] / m, acc[1] / m]);
    }
    if boundary_constrained {
        out.constrain(mesh);
    }
    out
}

pub fn gradient(mesh: &SimplicialMesh, v: &CrVectorField) -> Vec<Tensor2> {
    (0..mesh.n_elements()).map(|k| v.gradient_on(mesh, k)).collect()
}

pub fn divergence(mesh: &SimplicialMesh, v: &CrVectorField) -> Vec<f64> {
    (0..mesh.n_elements()).map(|k| v.divergence_on(mesh, k)).collect()
}

pub fn cell_average(mesh: &SimplicialMesh, v: &CrVectorField) -> Vec<Vector2> {
    (0..mesh.n_elements()).map(|k| v.cell_average_on(mesh, k)).collect()
}

/// `‖v‖_{L²}` of a piecewise affine scalar, exact with the degree-4 rule.
pub fn cr_l2_norm(mesh: &SimplicialMesh, v: &CrScalarField) -> f64 {
    (0..mesh.n_elements())
        .map(|k| integrate_element(mesh, k, |x| v.eval(mesh, k, x).powi(2)))
        .sum::<f64>()
        .sqrt()
}

pub fn cr_vector_l2_norm(mesh: &SimplicialMesh, v: &CrVectorField) -> f64 {
    (0..mesh.n_elements())
        .map(|k| {
            integrate_element(mesh, k, |x| {
                let y = v.eval(mesh, k, x);
                y[0] * y[0] + y[1] * y[1]
            })
        })
        .sum::<f64>()
        .sqrt()
}

/// Broken gradient norm `‖∇_h v‖_{L²}`.
pub fn cr_grad_l2_norm(mesh: &SimplicialMesh, v: &CrScalarField) -> f64 {
    (0..mesh.n_elements())
        .map(|k| {
            let g = v.gradient_on(mesh, k);
            mesh.elements[k].volume * (g[0] * g[0] + g[1] * g[1])
        })
        .sum::<f64>()
        .sqrt()
}

pub fn cr_vector_grad_l2_norm(mesh: &SimplicialMesh, v: &CrVectorField) -> f64 {
    (0..mesh.n_elements())
        .map(|k| {
            let g = v.gradient_on(mesh, k);
            mesh.elements[k].volume * g.iter().flatten().map(|x| x * x).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// `‖f - r‖_{L²}` for a piecewise constant `r`.
pub fn cell_l2_error(mesh: &SimplicialMesh, r: &CellField, f: impl Fn(Point) -> f64) -> f64 {
    (0..mesh.n_elements())
        .map(|k| integrate_element(mesh, k, |x| (f(x) - r.values[k]).powi(2)))
        .sum::<f64>()
        .sqrt()
}

pub fn cr_l2_error(mesh: &SimplicialMesh, v: &CrScalarField, f: impl Fn(Point) -> f64) -> f64 {
    (0..mesh.n_elements())
        .map(|k| integrate_element(mesh, k, |x| (f(x) - v.eval(mesh, k, x)).powi(2)))
        .sum::<f64>()
        .sqrt()
}

/// `‖∇f - ∇_h v‖_{L²}`.
pub fn cr_grad_error(mesh: &SimplicialMesh, v: &CrScalarField, grad_f: impl Fn(Point) -> Vector2) -> f64 {
    (0..mesh.n_elements())
        .map(|k| {
            let g = v.gradient_on(mesh, k);
            element_points(mesh, k)
                .map(|(x, w)| {
                    let d = grad_f(x);
                    w * ((d[0] - g[0]).powi(2) + (d[1] - g[1]).powi(2))
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Rectangle, SimplicialMesh};

    fn reference_triangle() -> SimplicialMesh {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        SimplicialMesh::from_triangles(v, &[[0, 1, 2]]).unwrap()
    }

    #[test]
    fn cell_projection_of_simple_functions() {
        let m = SimplicialMesh::structured(3, 4, Rectangle::new(0.0, 2.0, -1.0, 1.0).unwrap()).unwrap();
        assert!(project_cell(&m, |_| 3.5).values.iter().all(|&v| (v - 3.5).abs() < 1e-15));
        let px = project_cell(&m, |x| x[0]);
        for (k, e) in m.elements.iter().enumerate() {
            assert!((px.values[k] - e.barycenter[0]).abs() < 1e-15);
        }
        let t = reference_triangle();
        let sq = project_cell(&t, |x| x[0] * x[0]);
        assert!((sq.values[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn cr_projection_reproduces_affine() {
        let m = SimplicialMesh::unit_square(3).unwrap();
        let f = |x: Point| 0.3 - x[0] + 2.0 * x[1];
        let v = project_cr_scalar(&m, f, false);
        for k in 0..m.n_elements() {
            for (x, _) in element_points(&m, k) {
                assert!((v.eval(&m, k, x) - f(x)).abs() < 1e-14);
            }
            let g = v.gradient_on(&m, k);
            assert!((g[0] + 1.0).abs() < 1e-13 && (g[1] - 2.0).abs() < 1e-13);
        }
        let t = reference_triangle();
        let px = project_cr_scalar(&t, |x| x[0], false);
        let bottom = t.faces.iter().position(|f| f.barycenter == [0.5, 0.0]).unwrap();
        assert!((px.values[bottom] - 0.5).abs() < 1e-16);
        assert!(project_cr_scalar(&t, |_| 0.0, false).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_affine_on_one_triangle() {
        let t = reference_triangle();
        let v = project_cr_scalar(&t, |x| x[0] + 2.0 * x[1], false);
        let g = v.gradient_on(&t, 0);
        assert!((g[0] - 1.0).abs() < 1e-15 && (g[1] - 2.0).abs() < 1e-15);
        let c = project_cr_vector(&t, |_| [1.5, -2.0], false);
        assert!(c.gradient_on(&t, 0).iter().flatten().map(|x| x.abs()).fold(0.0, f64::max) < 1e-15);
        assert_eq!(c.cell_average_on(&t, 0), [1.5, -2.0]);
        let ax = project_cr_vector(&t, |x| [x[0], 0.0], false);
        assert!((ax.cell_average_on(&t, 0)[0] - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn cell_trace_arithmetic() {
        let m = SimplicialMesh::unit_square(1).unwrap();
        let inner = m.interior_faces()[0];
        let tr = cell_traces(&m, &[2.0, 1.0], inner);
        assert_eq!((tr.jump(), tr.mean()), (-1.0, 1.5));
        let ext = (0..m.n_faces()).find(|&f| !m.faces[f].is_interior()).unwrap();
        assert_eq!(cell_traces(&m, &[2.0, 1.0], ext).out_value, 0.0);
    }

    #[test]
    fn no_slip_projection_zeroes_boundary() {
        use std::f64::consts::PI;
        let m = SimplicialMesh::unit_square(6).unwrap();
        let raw = project_cr_vector(&m, |x| [(PI * x[0]).sin() * (PI * x[1]).sin(), 0.0], false);
        for (f, face) in m.faces.iter().enumerate() {
            if !face.is_interior() {
                assert!(raw.values[f][0].abs() < 1e-12);
            }
        }
    }
}
