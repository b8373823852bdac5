//! Upwind face fluxes with jump penalty, and the implicit transport matrix.
//!
//! Fluxes live on interior faces only and are oriented along `n_σ`, i.e. out
//! of the face's in-element. A flux leaves its in-element and enters its
//! out-element, which is what makes every sum over cells telescope.

use crate::mesh::{Point, SimplicialMesh};
use crate::quadrature::{element_points, face_points};
use crate::sparse::CsrMatrix;
use crate::spaces::{CrVectorField, Vector2};
use crate::{Error, Result};

fn pos(q: f64) -> f64 {
    q.max(0.0)
}

fn neg(q: f64) -> f64 {
    q.min(0.0)
}

/// Donor-cell flux `r_out [q]⁻ + r_in [q]⁺`.
pub fn upwind_plain(r_in: f64, r_out: f64, q: f64) -> f64 {
    r_out * neg(q) + r_in * pos(q)
}

/// The same flux written through mean and jump.
pub fn upwind_plain_centered(r_in: f64, r_out: f64, q: f64) -> f64 {
    0.5 * (r_in + r_out) * q - 0.5 * (r_out - r_in) * q.abs()
}

/// Donor-cell flux minus `h_eps/2` times the jump.
pub fn upwind_dissipative(r_in: f64, r_out: f64, q: f64, h_eps: f64) -> f64 {
    upwind_plain(r_in, r_out, q) - 0.5 * h_eps * (r_out - r_in)
}

pub fn upwind_dissipative_centered(r_in: f64, r_out: f64, q: f64, h_eps: f64) -> f64 {
    0.5 * (r_in + r_out) * q - 0.5 * (r_out - r_in) * (h_eps + q.abs())
}

pub fn upwind_dissipative_vec(r_in: Vector2, r_out: Vector2, q: f64, h_eps: f64) -> Vector2 {
    [
        upwind_dissipative(r_in[0], r_out[0], q, h_eps),
        upwind_dissipative(r_in[1], r_out[1], q, h_eps),
    ]
}

/// Coefficients `(c_in, c_out)` with `up = c_in r_in + c_out r_out`.
pub fn upwind_weights(q: f64, h_eps: f64) -> (f64, f64) {
    (pos(q) + 0.5 * h_eps, neg(q) - 0.5 * h_eps)
}

/// Dissipative flux of a cell field through interior face `f`.
pub fn face_flux(mesh: &SimplicialMesh, r: &[f64], u: &CrVectorField, f: usize, h_eps: f64) -> f64 {
    let face = &mesh.faces[f];
    let out = face.out_element.expect("fluxes live on interior faces");
    upwind_dissipative(r[face.in_element], r[out], u.normal_flux(mesh, f), h_eps)
}

/// `Σ_{σ∈E_int(K)} |σ| up_σ` with the sign of the outward normal of `K`.
///
/// `out_sign` is the sign applied on the receiving side; anything but `-1`
/// breaks conservation and exists only as a negative control.
pub fn flux_balance_with_sign(
    mesh: &SimplicialMesh,
    r: &[f64],
    u: &CrVectorField,
    h_eps: f64,
    out_sign: f64,
) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_elements()];
    for &f in mesh.interior_faces() {
        let face = &mesh.faces[f];
        let flux = face.measure * face_flux(mesh, r, u, f, h_eps);
        b[face.in_element] += flux;
        b[face.out_element.unwrap()] += out_sign * flux;
    }
    b
}

pub fn flux_balance(mesh: &SimplicialMesh, r: &[f64], u: &CrVectorField, h_eps: f64) -> Vec<f64> {
    flux_balance_with_sign(mesh, r, u, h_eps, -1.0)
}

/// Pattern of the cell-to-cell transport matrix: each cell and its face neighbours.
pub fn transport_pattern(mesh: &SimplicialMesh) -> CsrMatrix {
    let n = mesh.n_elements();
    let diag = (0..n).map(|k| (k, k));
    let off = mesh.interior_faces().iter().flat_map(|&f| {
        let a = mesh.faces[f].in_element;
        let b = mesh.faces[f].out_element.unwrap();
        [(a, b), (b, a)]
    });
    CsrMatrix::with_pattern(n, n, diag.chain(off).collect::<Vec<_>>())
}

/// Fills `a` (built by [`transport_pattern`]) with the implicit transport
/// operator: row K reads `|K|/Δt r_K + Σ ± |σ| up_σ[r, u]`, the fluxes scaled
/// by `zeta` (1 for the actual scheme).
pub fn assemble_transport_into(
    a: &mut CsrMatrix,
    mesh: &SimplicialMesh,
    u: &CrVectorField,
    dt: f64,
    h_eps: f64,
    zeta: f64,
) -> Result<()> {
    if !u.boundary_constrained || !u.vanishes_on_boundary(mesh) {
        return Err(Error::InvalidInput("transport velocity must vanish on the boundary".into()));
    }
    a.clear();
    for (k, e) in mesh.elements.iter().enumerate() {
        a.add(k, k, e.volume / dt);
    }
    for &f in mesh.interior_faces() {
        let face = &mesh.faces[f];
        let (i, o) = (face.in_element, face.out_element.unwrap());
        let (c_in, c_out) = upwind_weights(u.normal_flux(mesh, f), h_eps);
        let s = zeta * face.measure;
        a.add(i, i, s * c_in);
        a.add(i, o, s * c_out);
        a.add(o, i, -s * c_in);
        a.add(o, o, -s * c_out);
    }
    Ok(())
}

pub fn assemble_transport_operator(
    mesh: &SimplicialMesh,
    u: &CrVectorField,
    dt: f64,
    h_eps: f64,
) -> Result<CsrMatrix> {
    let mut a = transport_pattern(mesh);
    assemble_transport_into(&mut a, mesh, u, dt, h_eps, 1.0)?;
    Ok(a)
}

/// Both sides of the upwind consistency rearrangement for cell fields `r`,
/// `f`, a no-slip velocity `v` and a smooth `phi`. With `h_eps = None` the
/// plain donor-cell flux is used and the jump-penalty term drops out.
pub fn upwind_identity_sides(
    mesh: &SimplicialMesh,
    r: &[f64],
    f: &[f64],
    v: &CrVectorField,
    phi: &dyn Fn(Point) -> f64,
    grad_phi: &dyn Fn(Point) -> Vector2,
    h_eps: Option<f64>,
) -> (f64, f64) {
    let he = h_eps.unwrap_or(0.0);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for k in 0..mesh.n_elements() {
        let div = v.divergence_on(mesh, k);
        for (x, w) in element_points(mesh, k) {
            let vx = v.eval(mesh, k, x);
            let g = grad_phi(x);
            lhs += w * r[k] * (vx[0] * g[0] + vx[1] * g[1]);
            rhs += w * r[k] * (f[k] - phi(x)) * div;
        }
        for &s in &mesh.elements[k].faces {
            let face = &mesh.faces[s];
            let n = mesh.outward_normal(s, k);
            let qk = v.values[s][0] * n[0] + v.values[s][1] * n[1];
            let neighbour = if face.in_element == k { face.out_element } else { Some(face.in_element) };
            let r_out = neighbour.map_or(0.0, |o| r[o]);
            let phi_mean = face_points(mesh, s).map(|(x, w)| w * phi(x)).sum::<f64>() / face.measure;
            rhs += face.measure * (f[k] - phi_mean) * (r_out - r[k]) * neg(qk);
            for (x, w) in face_points(mesh, s) {
                let vx = v.eval(mesh, k, x);
                rhs += w * (phi(x) - phi_mean) * r[k] * (vx[0] * n[0] + vx[1] * n[1] - qk);
            }
        }
    }
    for &s in mesh.interior_faces() {
        let face = &mesh.faces[s];
        let (i, o) = (face.in_element, face.out_element.unwrap());
        let q = v.normal_flux(mesh, s);
        let up = upwind_dissipative(r[i], r[o], q, he);
        lhs -= face.measure * up * (f[o] - f[i]);
        rhs += 0.5 * he * face.measure * (r[o] - r[i]) * (f[o] - f[i]);
    }
    (lhs, rhs)
}

/// Componentwise version for vector cell fields.
#[allow(clippy::too_many_arguments)]
pub fn upwind_identity_sides_vec(
    mesh: &SimplicialMesh,
    s: &[Vector2],
    g: &[Vector2],
    w: &CrVectorField,
    psi: &dyn Fn(Point) -> Vector2,
    grad_psi: &dyn Fn(Point) -> [Vector2; 2],
    h_eps: Option<f64>,
) -> (f64, f64) {
    let mut total = (0.0, 0.0);
    for i in 0..2 {
        let si: Vec<f64> = s.iter().map(|v| v[i]).collect();
        let gi: Vec<f64> = g.iter().map(|v| v[i]).collect();
        let (l, r) = upwind_identity_sides(mesh, &si, &gi, w, &|x| psi(x)[i], &|x| grad_psi(x)[i], h_eps);
        total.0 += l;
        total.1 += r;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::project_cr_vector;

    #[test]
    fn closed_forms_on_hand_values() {
        assert_eq!(upwind_plain(2.0, 1.0, 0.5), 1.0);
        assert_eq!(upwind_plain_centered(2.0, 1.0, 0.5), 1.0);
        assert!((upwind_dissipative(2.0, 1.0, 0.5, 0.1) - 1.05).abs() < 1e-15);
        assert!((upwind_dissipative_centered(2.0, 1.0, 0.5, 0.1) - 1.05).abs() < 1e-15);
        assert_eq!(upwind_plain(3.0, 3.0, -0.25), -0.75);
        assert_eq!(upwind_plain(3.0, 7.0, 0.0), 0.0);
        assert_eq!(upwind_dissipative(3.0, 7.0, 0.0, 0.2), -0.4);
        assert_eq!(upwind_dissipative(3.0, 3.0, 0.7, 0.2), upwind_plain(3.0, 3.0, 0.7));
    }

    #[test]
    fn two_cell_matrix_by_hand() {
        let m = SimplicialMesh::unit_square(1).unwrap();
        let f = m.interior_faces()[0];
        let n = m.faces[f].normal;
        // velocity along n_σ with normal component 0.3 on the diagonal only
        let mut u = CrVectorField::zeros(&m, true);
        u.values[f] = [0.3 * n[0], 0.3 * n[1]];
        let (dt, he) = (0.1, 0.2);
        let a = assemble_transport_operator(&m, &u, dt, he).unwrap();
        let len = 2f64.sqrt();
        let vol = 0.5;
        let expect = [
            [vol / dt + len * (0.3 + 0.1), len * (0.0 - 0.1)],
            [-len * (0.3 + 0.1), vol / dt - len * (0.0 - 0.1)],
        ];
        let d = a.to_dense();
        for i in 0..2 {
            for j in 0..2 {
                assert!((d[i][j] - expect[i][j]).abs() < 1e-14, "{i}{j}: {} vs {}", d[i][j], expect[i][j]);
            }
        }
    }

    #[test]
    fn rest_velocity_keeps_uniform_data() {
        let m = SimplicialMesh::unit_square(4).unwrap();
        let u = CrVectorField::zeros(&m, true);
        let a = assemble_transport_operator(&m, &u, 0.05, 0.01).unwrap();
        let ones = vec![1.0; m.n_elements()];
        let ar = a.mul_vec(&ones);
        for (k, e) in m.elements.iter().enumerate() {
            assert!((ar[k] - e.volume / 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_unconstrained_velocity() {
        let m = SimplicialMesh::unit_square(2).unwrap();
        let u = project_cr_vector(&m, |_| [1.0, 0.0], false);
        assert!(assemble_transport_operator(&m, &u, 0.1, 0.1).is_err());
    }
}
