//! Core numerics for a static Klein-Gordon-Maxwell system on an axis-aligned
//! box, with a spatially varying coupling coefficient that may vanish on large
//! parts of the domain.
//!
//! The crate discretises the coupled pair
//!
//! ```text
//!   lap(u)   = m^2 u - (q phi_tot)^2 u      u = 0           on the boundary
//!   lap(phi) = (q u)^2 phi_tot - A/|O|      d(phi)/dn = 0   on the boundary
//! ```
//!
//! where `phi_tot = phi + chi` and `chi` carries the inhomogeneous Neumann
//! data (total flux `A`).  Everything is built on a uniform tensor grid with
//! lumped (trapezoidal) quadrature and a ghost-node finite-difference
//! Laplacian, which keeps the system matrices symmetric M-matrices; the
//! discrete maximum principle used by the sign diagnostics is therefore
//! literal, not approximate.
//!
//! The crate is `no_std`-compatible (requires `alloc`); enable the `libm`
//! feature instead of `std` on bare-metal targets.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("kgm-core needs either the `std` or the `libm` feature for f64 math");

extern crate alloc;

pub mod elliptic;
pub mod error;
pub mod field;
pub mod grid;
pub mod linsolve;
mod math;
pub mod operators;
pub mod optimize;
pub mod reduced;
pub mod rng;
pub mod sample;

pub use error::Error;
pub use field::{BoundaryField, NormKind, ScalarField, Space};
pub use grid::Grid;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
