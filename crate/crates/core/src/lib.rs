//! Monte Carlo engines and a verification harness for multi-type branching
//! random walks with local self-regulation on finite lattices.
//!
//! The crate simulates three coupled pictures of the same population model
//! and cross-checks them against each other:
//!
//! - [`particle`]: exact event-driven (Gillespie) simulation of the particle
//!   system, including its small-mass rescaling with per-particle mass `eps`;
//! - [`diffusion`]: full-truncation Euler–Maruyama integration of the limiting
//!   system of interacting square-root diffusions, with shared-noise coupling;
//! - [`dual`]: the dual process, a spatial Kingman coalescent driving a
//!   square-root diffusion with immigration, plus its Feynman–Kac weight.
//!
//! [`generator`] carries the closed-form generator algebra for the exponential
//! duality function, [`checks`] the Monte Carlo identity checks built on it,
//! and [`studies`] the scripted convergence studies. [`config`] and [`output`]
//! provide the run-configuration and artifact surface used by the CLI.
//!
//! Replicates fan out in parallel via rayon when the `parallel` feature
//! (default) is enabled; disabling it leaves a dependency-free sequential
//! core with identical outputs.

pub mod checks;
pub mod config;
pub mod diffusion;
pub mod dual;
pub mod error;
pub mod fenwick;
pub mod field;
pub mod generator;
pub mod geometry;
pub mod model;
pub mod output;
pub mod particle;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod studies;

pub use error::{ConfigError, SimError};
pub use field::Field;
pub use geometry::Geography;
pub use model::ModelParams;

/// Version stamp embedded in every output artifact.
pub const SCHEMA_VERSION: u32 = 1;
