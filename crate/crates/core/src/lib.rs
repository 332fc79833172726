//! Numerical toolkit for studying how a simple random walk on `Z^d` can
//! disconnect a macroscopic body from infinity.
//!
//! The crate builds a compactly supported tilt potential around the body,
//! runs the associated confined and tilted walks, and provides the exact
//! linear-algebra machinery (capacities, spectral gaps, quasi-stationary
//! distributions, excursion processes) needed to assemble an entropy-method
//! lower bound on the disconnection probability at finite lattice sizes.

pub mod error;
pub mod excursions;
pub mod hitting;
pub mod interlacements;
pub mod lattice;
pub mod linalg;
pub mod potential;
pub mod presets;
pub mod qsd;
pub mod spectral;
pub mod stats;
pub mod streams;
pub mod walk;

pub use error::{Error, Result};
