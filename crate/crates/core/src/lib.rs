//! Mixed-norm inequalities for semi-discrete convolutions on lattices that are
//! periodic, or echo-periodic, along part of an ordered basis.
//!
//! The crate samples functions on midpoint grids in basis coordinates,
//! evaluates iterated weighted mixed Lebesgue norms, forms semi-discrete
//! convolutions with lattice sequences, and checks the resulting inequality
//! numerically through the [`harness`].

pub mod convolution;
pub mod echo;
pub mod error;
pub mod geometry;
pub mod gridfn;
pub mod harness;
pub mod norms;
pub mod report;
pub mod stft;
pub mod weights;

pub use error::{Error, Result};
