//! Real-time Kohn–Sham simulation of homonuclear diatomic molecules in
//! intense, linearly polarised laser pulses.
//!
//! The electronic structure is described in the exchange-only local density
//! approximation on a cylindrical grid (finite differences along the
//! molecular axis, a Lagrange–Laguerre mesh across it). The crate provides
//! the grid, the effective potential, a self-consistent ground-state solver
//! with ΔSCF ionisation potentials, Krylov time propagation with absorbing
//! boundaries and frozen orbitals, and analysis-box ionisation observables.

pub mod checkpoint;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod groundstate;
pub mod linalg;
pub mod observables;
pub mod potentials;
pub mod propagation;
pub mod quadrature;
pub mod units;

pub use error::{Error, Result};
pub use grid::{Grid, GridSpec, Orbital, Spin};

/// Real scalar used by the solvers.
pub type Real = f64;
/// Complex scalar used for time-dependent orbitals.
pub type Complex = num_complex::Complex64;
/// Gauss–Laguerre rule in the solver precision.
pub type Quadrature = quadrature::GaussLaguerre<Real>;
