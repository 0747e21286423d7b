//! Goal-oriented adaptive finite elements for convection-dominated
//! convection-diffusion-reaction problems on 2D triangular meshes.
//!
//! The crate solves
//!
//! ```text
//! du/dt + b . grad u - eps lap u + alpha u + r(u) = f   in Omega x I
//! ```
//!
//! (and its steady counterpart) with streamline-upwind stabilization plus an
//! optional crosswind shock-capturing term, estimates the error in a user
//! goal functional by a dual-weighted-residual argument, and adapts the
//! triangulation and the time partition from the resulting cellwise
//! indicators. All meshes live in one bisection forest so solutions can be
//! transferred exactly between refinement levels.

pub mod assembly;
pub mod benchmarks;
pub mod config;
pub mod dwr;
pub mod goals;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod space;
pub mod sparse;
pub mod stabilization;
pub mod steady;
pub mod unsteady;
pub mod vtk;

/// Errors surfaced by the crate's fallible operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cell {0} is not active on the requested mesh")]
    InactiveCell(usize),
    #[error("point ({0}, {1}) lies outside the mesh")]
    PointOutsideMesh(f64, f64),
    #[error("polynomial degree {0} is out of the supported range 1..=4")]
    BadDegree(usize),
    #[error("dual degree {dual} must exceed the primal degree {primal}")]
    DualDegreeTooLow { primal: usize, dual: usize },
    #[error("quadrature degree {0} is out of the supported range 1..=12")]
    BadQuadratureDegree(usize),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("nonlinear solve failed: {0}")]
    Nonlinear(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mesh construction failed: {0}")]
    Mesh(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Deterministic pseudo-random stream in [0,1) for tests.
#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    }
}
