//! Conforming triangulations with oriented faces.
//!
//! Faces are numbered in order of first appearance while walking elements by
//! increasing index, so the element that first sees a face is also the one
//! with the smaller index. That element is the face's `in_element` and the
//! stored normal points out of it.

use std::collections::HashMap;

use crate::{Error, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rectangle {
    pub fn unit() -> Self {
        Rectangle { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let ok = [x0, x1, y0, y1].iter().all(|v| v.is_finite()) && x1 > x0 && y1 > y0;
        if !ok {
            return Err(Error::InvalidInput(format!(
                "degenerate rectangle [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Ok(Rectangle { x0, x1, y0, y1 })
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    pub vertices: [usize; 3],
    /// `faces[i]` is the edge opposite `vertices[i]`.
    pub faces: [usize; 3],
    pub volume: f64,
    pub barycenter: Point,
    pub diameter: f64,
    pub inradius: f64,
}

#[derive(Debug, Clone)]
pub struct Face {
    pub vertices: [usize; 2],
    pub measure: f64,
    pub barycenter: Point,
    /// Unit normal pointing out of `in_element`.
    pub normal: Point,
    pub in_element: usize,
    pub out_element: Option<usize>,
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.out_element.is_some()
    }
}

/// Grid layout remembered by structured meshes, used for point location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLayout {
    pub nx: usize,
    pub ny: usize,
    pub domain: Rectangle,
}

#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    pub vertices: Vec<Point>,
    pub elements: Vec<Element>,
    pub faces: Vec<Face>,
    /// Maximum element diameter.
    pub h: f64,
    pub grid: Option<GridLayout>,
    interior_faces: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshStatistics {
    pub h: f64,
    pub min_volume: f64,
    pub shape_ratio_max: f64,
    pub n_vertices: usize,
    pub n_elements: usize,
    pub n_faces: usize,
    pub n_interior_faces: usize,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dist(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

impl SimplicialMesh {
    /// Builds a mesh from vertices and counter-clockwise triangles.
    pub fn from_triangles(vertices: Vec<Point>, triangles: &[[usize; 3]]) -> Result<Self> {
        let mut elements = Vec::with_capacity(triangles.len());
        let mut faces: Vec<Face> = Vec::new();
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();

        for (k, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("element {k} references a missing vertex")));
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let ab = sub(b, a);
            let ac = sub(c, a);
            let volume = 0.5 * (ab[0] * ac[1] - ab[1] * ac[0]);
            if !(volume > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "element {k} is degenerate or clockwise (signed area {volume})"
                )));
            }
            let barycenter = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
            let edges = [dist(b, c), dist(c, a), dist(a, b)];
            let perimeter: f64 = edges.iter().sum();
            let diameter = edges.iter().cloned().fold(0.0, f64::max);

            let mut local = [0usize; 3];
            for i in 0..3 {
                let p = tri[(i + 1) % 3];
                let q = tri[(i + 2) % 3];
                let key = (p.min(q), p.max(q));
                match lookup.get(&key) {
                    Some(&f) => {
                        let face = &mut faces[f];
                        if face.out_element.is_some() {
                            return Err(Error::InvalidMesh(format!(
                                "edge {key:?} is shared by more than two elements"
                            )));
                        }
                        face.out_element = Some(k);
                        local[i] = f;
                    }
                    None => {
                        let (pp, qp) = (vertices[p], vertices[q]);
                        let measure = dist(pp, qp);
                        let d = sub(qp, pp);
                        // (p, q) runs counter-clockwise around element k, so
                        // rotating by -90 degrees points outward.
                        let normal = [d[1] / measure, -d[0] / measure];
                        let f = faces.len();
                        faces.push(Face {
                            vertices: [p, q],
                            measure,
                            barycenter: [0.5 * (pp[0] + qp[0]), 0.5 * (pp[1] + qp[1])],
                            normal,
                            in_element: k,
                            out_element: None,
                        });
                        lookup.insert(key, f);
                        local[i] = f;
                    }
                }
            }
            elements.push(Element {
                vertices: *tri,
                faces: local,
                volume,
                barycenter,
                diameter,
                inradius: 2.0 * volume / perimeter,
            });
        }

        let h = elements.iter().map(|e| e.diameter).fold(0.0, f64::max);
        let interior_faces = (0..faces.len()).filter(|&f| faces[f].is_interior()).collect();
        Ok(SimplicialMesh { vertices, elements, faces, h, grid: None, interior_faces })
    }

    /// Triangulates an `nx` by `ny` grid, splitting every cell along its
    /// lower-left to upper-right diagonal.
    pub fn structured(nx: usize, ny: usize, domain: Rectangle) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidInput(format!("grid size must be positive, got {nx} x {ny}")));
        }
        Rectangle::new(domain.x0, domain.x1, domain.y0, domain.y1)?;
        let hx = (domain.x1 - domain.x0) / nx as f64;
        let hy = (domain.y1 - domain.y0) / ny as f64;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                // Pin the far edges exactly to the domain bounds.
                let x = if i == nx { domain.x1 } else { domain.x0 + i as f64 * hx };
                let y = if j == ny { domain.y1 } else { domain.y0 + j as f64 * hy };
                vertices.push([x, y]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v11, v01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        let mut mesh = Self::from_triangles(vertices, &triangles)?;
        mesh.grid = Some(GridLayout { nx, ny, domain });
        Ok(mesh)
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::structured(n, n, Rectangle::unit())
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn interior_faces(&self) -> &[usize] {
        &self.interior_faces
    }

    /// Sign turning `n_σ` into the outward normal of `element`.
    pub fn orientation(&self, face: usize, element: usize) -> f64 {
        if self.faces[face].in_element == element {
            1.0
        } else {
            -1.0
        }
    }

    /// Outward unit normal of `element` on `face`.
    pub fn outward_normal(&self, face: usize, element: usize) -> Point {
        let s = self.orientation(face, element);
        let n = self.faces[face].normal;
        [s * n[0], s * n[1]]
    }

    pub fn total_volume(&self) -> f64 {
        self.elements.iter().map(|e| e.volume).sum()
    }

    /// Barycentric coordinates of `x` with respect to element `k`.
    pub fn barycentric(&self, k: usize, x: Point) -> [f64; 3] {
        let [a, b, c] = self.elements[k].vertices.map(|v| self.vertices[v]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Maps reference coordinates `(s, t)` on the unit triangle into element `k`.
    pub fn map_reference(&self, k: usize, s: f64, t: f64) -> Point {
        let [a, b, c] = self.elements[k].vertices.map(|v| self.vertices[v]);
        [
            a[0] + s * (b[0] - a[0]) + t * (c[0] - a[0]),
            a[1] + s * (b[1] - a[1]) + t * (c[1] - a[1]),
        ]
    }

    /// Element containing `x` for structured meshes. Points on shared edges go
    /// to either neighbour.
    pub fn locate(&self, x: Point) -> Option<usize> {
        let g = self.grid?;
        let d = g.domain;
        let tol = 1e-12 * (d.x1 - d.x0).max(d.y1 - d.y0);
        if x[0] < d.x0 - tol || x[0] > d.x1 + tol || x[1] < d.y0 - tol || x[1] > d.y1 + tol {
            return None;
        }
        let sx = (x[0] - d.x0) / (d.x1 - d.x0) * g.nx as f64;
        let sy = (x[1] - d.y0) / (d.y1 - d.y0) * g.ny as f64;
        let i = (sx.floor().max(0.0) as usize).min(g.nx - 1);
        let j = (sy.floor().max(0.0) as usize).min(g.ny - 1);
        let upper = (sy - j as f64) > (sx - i as f64);
        Some(2 * (j * g.nx + i) + usize::from(upper))
    }

    pub fn statistics(&self) -> MeshStatistics {
        MeshStatistics {
            h: self.h,
            min_volume: self.elements.iter().map(|e| e.volume).fold(f64::INFINITY, f64::min),
            shape_ratio_max: self
                .elements
                .iter()
                .map(|e| e.diameter / e.inradius)
                .fold(0.0, f64::max),
            n_vertices: self.vertices.len(),
            n_elements: self.elements.len(),
            n_faces: self.faces.len(),
            n_interior_faces: self.interior_faces.len(),
        }
    }

    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self, max_shape_ratio: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidMesh(msg));
        for (k, e) in self.elements.iter().enumerate() {
            if !(e.volume > 0.0) {
                return bad(format!("element {k} has nonpositive volume"));
            }
            if e.diameter / e.inradius > max_shape_ratio {
                return bad(format!("element {k} exceeds the shape ratio bound {max_shape_ratio}"));
            }
            let mut closure = [0.0; 2];
            for &f in &e.faces {
                let face = &self.faces[f];
                if face.in_element != k && face.out_element != Some(k) {
                    return bad(format!("element {k} lists face {f} which does not list it back"));
                }
                let n = self.outward_normal(f, k);
                closure[0] += face.measure * n[0];
                closure[1] += face.measure * n[1];
            }
            let scale = e.diameter;
            if closure[0].abs() > 1e-13 * scale || closure[1].abs() > 1e-13 * scale {
                return bad(format!("element {k} boundary does not close: {closure:?}"));
            }
        }
        for (f, face) in self.faces.iter().enumerate() {
            if !(face.measure > 0.0) {
                return bad(format!("face {f} has nonpositive measure"));
            }
            let n = face.normal;
            if ((n[0] * n[0] + n[1] * n[1]).sqrt() - 1.0).abs() > 1e-14 {
                return bad(format!("face {f} normal is not unit length"));
            }
            let kin = face.in_element;
            let xin = sub(face.barycenter, self.elements[kin].barycenter);
            if n[0] * xin[0] + n[1] * xin[1] <= 0.0 {
                return bad(format!("face {f} normal does not point out of its in-element"));
            }
            if !self.elements[kin].faces.contains(&f) {
                return bad(format!("in-element of face {f} does not list it"));
            }
            if let Some(kout) = face.out_element {
                if kout == kin {
                    return bad(format!("face {f} has identical in and out elements"));
                }
                if kin > kout {
                    return bad(format!("face {f} in-element is not the smaller index"));
                }
                if !self.elements[kout].faces.contains(&f) {
                    return bad(format!("out-element of face {f} does not list it"));
                }
                let xout = sub(self.elements[kout].barycenter, face.barycenter);
                if n[0] * xout[0] + n[1] * xout[1] <= 0.0 {
                    return bad(format!("elements of face {f} lie on the same side"));
                }
            }
        }
        // Edges shared by at most two positively oriented triangles, each on
        // its own side, plus V - E + F = 1 rule out overlaps and holes.
        let euler =
            self.vertices.len() as i64 - self.faces.len() as i64 + self.elements.len() as i64;
        if euler != 1 {
            return bad(format!("Euler characteristic {euler} != 1"));
        }
        Ok(())
    }
}
