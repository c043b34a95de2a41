//! Numerical laboratory for time-optimal control of the one-dimensional
//! semilinear heat equation with Dirichlet boundary conditions and a
//! spatially localized control.
//!
//! The crate builds up from a uniform grid on (0,1) ([`mesh`]) through
//! implicit forward solvers ([`pde`]), duality-based null control and
//! admissible-control construction ([`control`]), the time-optimal
//! driver with its bang-bang saturation diagnostics ([`timeopt`]), and
//! an empirical study of the measurable-set observability constant
//! ([`observability`]). Everything numeric is generic over the scalar
//! type; the aliases at the crate root fix `f64`, which is what the CLI
//! and the test suites use.

// negated comparisons like `!(x > 0)` are load-bearing: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// indexed loops over nodes/steps are the house style for the stencils
#![allow(clippy::needless_range_loop)]

pub mod control;
pub mod error;
pub mod export;
pub mod linalg;
pub mod mesh;
pub mod nonlinearity;
pub mod observability;
pub mod pde;
pub mod scalar;
pub mod timeopt;

pub use error::{Error, Result};
pub use scalar::Real;

/// f64 spatial grid.
pub type Grid1D = mesh::Grid1D<f64>;
/// f64 time grid.
pub type TimeGrid = mesh::TimeGrid<f64>;
/// f64 control region indicator.
pub type RegionMask = mesh::RegionMask<f64>;
/// f64 time set.
pub type TimeSet = mesh::TimeSet<f64>;
/// f64 space-time trajectory.
pub type Trajectory = pde::Trajectory<f64>;
/// f64 potential coefficient field.
pub type PotentialField = pde::PotentialField<f64>;
/// f64 source field.
pub type SourceField = pde::SourceField<f64>;
/// f64 reaction term.
pub type Nonlinearity = nonlinearity::Nonlinearity<f64>;
/// f64 control signal.
pub type ControlSignal = control::ControlSignal<f64>;
/// f64 null-control certificate.
pub type NullControlCertificate = control::NullControlCertificate<f64>;
/// f64 time-optimal result.
pub type TimeOptResult = timeopt::TimeOptResult<f64>;
/// f64 observability estimate.
pub type ObservabilityEstimate = observability::ObservabilityEstimate<f64>;
