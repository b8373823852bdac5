#![allow(dead_code)]

use fefv_core::scheme::State;
use fefv_core::spaces::{CellField, CrScalarField, CrVectorField};
use fefv_core::SimplicialMesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cell_values(rng: &mut ChaCha8Rng, mesh: &SimplicialMesh, lo: f64, hi: f64) -> Vec<f64> {
    (0..mesh.n_elements()).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn cr_scalar(rng: &mut ChaCha8Rng, mesh: &SimplicialMesh) -> CrScalarField {
    let mut v = CrScalarField { values: vec![0.0; mesh.n_faces()], boundary_constrained: true };
    for &f in mesh.interior_faces() {
        v.values[f] = rng.random_range(-1.0..1.0);
    }
    v
}

pub fn cr_vector(rng: &mut ChaCha8Rng, mesh: &SimplicialMesh, size: f64) -> CrVectorField {
    let mut v = CrVectorField::zeros(mesh, true);
    for &f in mesh.interior_faces() {
        v.values[f] = [rng.random_range(-size..size), rng.random_range(-size..size)];
    }
    v
}

/// Random admissible state: positive density, temperature in `(0.6, 1.6)`,
/// no-slip velocity of the given size.
pub fn random_state(rng: &mut ChaCha8Rng, mesh: &SimplicialMesh, size: f64) -> State {
    let rho = CellField { values: cell_values(rng, mesh, 0.5, 1.5) };
    let theta = CellField { values: cell_values(rng, mesh, 0.6, 1.6) };
    State::new(0, rho, theta, cr_vector(rng, mesh, size))
}
