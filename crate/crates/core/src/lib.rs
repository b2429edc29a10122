//! Hybrid high-order discretisation of the power-law Brinkman problem on
//! general polygonal meshes of the plane.
//!
//! The crate is organised bottom-up: [`mesh`] and [`quadrature`] handle
//! geometry, [`polyspace`] the polynomial bases and projectors,
//! [`localops`] the element reconstructions, [`system`] the global nonlinear
//! problem and its Newton solver, [`analysis`] the error measures and
//! [`harness`] the manufactured-solution convergence studies.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod localops;
pub mod mesh;
pub mod polyspace;
pub mod quadrature;
pub mod system;

pub use analysis::{convergence_rates, MonitoredError, Regime, RegimeClassification};
pub use error::{Error, Result};
pub use harness::{build_case, run_study, ErrorReport, ManufacturedCase, MeshFamily, StudyConfig};
pub use localops::LocalOperators;
pub use mesh::{Mesh, Point};
pub use system::{BrinkmanSystem, Coefficients, SolveReport, SolverOptions};
