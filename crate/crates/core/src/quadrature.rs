//! Quadrature on triangles and edges.

use crate::mesh::{Point, SimplicialMesh};

/// Symmetric 6-point rule, exact for polynomials of degree 4. Points are
/// barycentric triples, weights sum to one (multiply by the area).
const A1: f64 = 0.445_948_490_915_964_886_318_329_253_883_052;
const W1: f64 = 0.223_381_589_678_011_465_695_007_008_433_123;
const A2: f64 = 0.091_576_213_509_770_743_459_571_463_402_202;
const W2: f64 = 0.109_951_743_655_321_867_638_326_324_900_211;

pub const TRIANGLE_POINTS: [([f64; 3], f64); 6] = [
    ([A1, A1, 1.0 - 2.0 * A1], W1),
    ([A1, 1.0 - 2.0 * A1, A1], W1),
    ([1.0 - 2.0 * A1, A1, A1], W1),
    ([A2, A2, 1.0 - 2.0 * A2], W2),
    ([A2, 1.0 - 2.0 * A2, A2], W2),
    ([1.0 - 2.0 * A2, A2, A2], W2),
];

const G: f64 = 0.774_596_669_241_483_377_035_853_079_956_480;

/// Three-point Gauss-Legendre rule on [0, 1], exact to degree 5.
pub const EDGE_POINTS: [(f64, f64); 3] = [
    (0.5 - 0.5 * G, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.5 + 0.5 * G, 5.0 / 18.0),
];

/// Physical quadrature points and weights (including |K|) on element `k`.
pub fn element_points(mesh: &SimplicialMesh, k: usize) -> impl Iterator<Item = (Point, f64)> + '_ {
    let e = &mesh.elements[k];
    let [a, b, c] = e.vertices.map(|v| mesh.vertices[v]);
    TRIANGLE_POINTS.iter().map(move |&(l, w)| {
        (
            [
                l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
                l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
            ],
            w * e.volume,
        )
    })
}

/// Physical quadrature points and weights (including |σ|) on face `f`.
pub fn face_points(mesh: &SimplicialMesh, f: usize) -> impl Iterator<Item = (Point, f64)> + '_ {
    let face = &mesh.faces[f];
    let [p, q] = face.vertices.map(|v| mesh.vertices[v]);
    EDGE_POINTS.iter().map(move |&(s, w)| {
        ([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])], w * face.measure)
    })
}

pub fn integrate_element(mesh: &SimplicialMesh, k: usize, f: impl Fn(Point) -> f64) -> f64 {
    element_points(mesh, k).map(|(x, w)| w * f(x)).sum()
}

pub fn integrate_face(mesh: &SimplicialMesh, face: usize, f: impl Fn(Point) -> f64) -> f64 {
    face_points(mesh, face).map(|(x, w)| w * f(x)).sum()
}
