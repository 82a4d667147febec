//! Structure-preserving finite element solver for compressible,
//! heat-conducting viscous flow.
//!
//! Velocity lives in a continuous Lagrange space, density and entropy in a
//! discontinuous one. A discrete-gradient time discretization conserves mass
//! and total energy to solver precision and yields a per-cell discrete second
//! law. The crate ships a Rayleigh–Bénard scenario driver and a small
//! finite-dimensional thermodynamics test bed.

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod forms;
pub mod gas;
pub mod mesh;
pub mod scalar;
pub mod scenario;
pub mod spaces;
pub mod stepper;
pub mod toy_thermo;

pub use error::{Error, Location, Result};
pub use exec::Execution;
pub use mesh::Mesh;
