//! Construction, repair and verification of port-Hamiltonian representations
//! `f(z) = (J(z) - R(z)) η(z)` of passive nonlinear systems, where `η = ∇H`.
//!
//! The crate is organised bottom-up:
//!
//! * [`expr`] parses and symbolically differentiates scalar formulas.
//! * [`model`] assembles a [`model::SystemDefinition`] from a JSON document and
//!   audits the standing passivity assumptions at sample points.
//! * [`decomp`] computes `M(z)` with `f = M η` by quadrature, diagnoses definiteness
//!   and applies correction terms `P(z)` with `P η = 0`.
//! * [`dynamics`] integrates the resulting structure with a discrete-gradient
//!   scheme and records an exact energy ledger.
//! * [`corpus`] builds the reference systems (linear, rigid body, wave).
//!
//! ```
//! use phforge::corpus;
//! use phforge::decomp::{decompose, DecomposeOptions};
//! use phforge::dynamics::{simulate, InputSignal, IntegratorConfig, Scheme};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let s = corpus::build_rigid_body(1.0, 2.0, 3.0)?.system()?;
//! let d = decompose(&s, &[1.0, 1.0, 1.0], &DecomposeOptions::default())?;
//! assert!(d.residuals.psd >= -1e-10);
//!
//! let opts = DecomposeOptions::default();
//! let cfg = IntegratorConfig::new(0.01, Scheme::DiscreteGradientJr);
//! let traj = simulate(&s, &[1.0, 1.0, 1.0], &InputSignal::Zero, 10.0, &cfg, &opts)?;
//! assert!(traj.max_energy_drift() < 1e-10);
//! # Ok(())
//! # }
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod decomp;
pub mod dynamics;
pub mod expr;
pub mod linalg;
pub mod model;
pub mod quadrature;

/// Default master tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
