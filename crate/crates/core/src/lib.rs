//! Quantum kernels built from Kerr coherent states, end to end: truncated
//! Fock-space state construction, closed-form kernel evaluation, SVM
//! training and grid search, verification of the feature-space geometry, and
//! a coupled-waveguide simulator that realizes the states optically.

pub mod datasets;
pub mod error;
pub mod fockspace;
pub mod geometry;
pub mod kernels;
pub mod lattice;
pub mod numeric;
pub mod svm;

pub use error::{Error, Result};
