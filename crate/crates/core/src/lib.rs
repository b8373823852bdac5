//! Mixed finite element / finite volume discretization of the compressible
//! Navier-Stokes system with potential temperature transport.
//!
//! Density and potential temperature live on cells, velocity on the
//! Crouzeix-Raviart space with no-slip boundary. Each time step is a backward
//! Euler solve of the coupled system; the diagnostics module checks the
//! discrete conservation, energy and entropy properties of the result.

pub mod diagnostics;
pub mod mesh;
pub mod quadrature;
pub mod scheme;
pub mod spaces;
pub mod sparse;
pub mod upwind;

pub use mesh::{Rectangle, SimplicialMesh};
pub use scheme::{Linearization, SchemeParams, SolverSettings, State};
pub use spaces::{CellField, CrScalarField, CrVectorField};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("positivity lost: {0}")]
    Positivity(String),
    #[error("nonlinear solver did not converge at step {step}: residual {residual:e} after {iterations} iterations; try a smaller time step")]
    NonConvergence { step: usize, residual: f64, iterations: usize },
    #[error("time level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
