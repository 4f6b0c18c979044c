//! Dicke superradiance in extended emitter arrays.
//!
//! The crate builds emitter geometries, assembles the dipole–dipole couplings
//! of the free-space electromagnetic field, decomposes the dissipative matrix
//! into collective decay channels and evaluates exact few-photon correlation
//! functions on the fully inverted state. A superradiant burst occurs when the
//! second-order correlation g²(0) exceeds one; [`criterion`] locates the
//! lattice spacing where that stops happening and [`dynamics`] checks the
//! prediction against exact small-N master-equation evolution.
//!
//! Units throughout: lengths in λ₀, rates in Γ₀, times in 1/Γ₀.

pub mod channels;
pub mod cli;
pub mod criterion;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod interactions;
pub mod statistics;

pub type Complex64 = nalgebra::Complex<f64>;

pub use error::{Error, Result};
