//! Dissipative abelian sandpile models on the d-dimensional torus:
//! exact avalanche dynamics, recurrence combinatorics, lattice Green
//! functions, determinantal height statistics and scaling analysis.

pub mod bessel;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod green;
pub mod heights;
pub mod lattice;
pub mod linalg;
pub mod montecarlo;
pub mod output;
pub mod quad;
pub mod recurrence;
pub mod scaling;
pub mod rng;

pub use dynamics::{AvalancheRecord, GrainConfig};
pub use error::{Result, SandlabError};
pub use lattice::{Displacement, ModelParams, Site};
