//! Numerical laboratory for the degenerate operator `(1/Λ) ∇·(a ∇u)` on
//! synthetic stationary random environments.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: coefficient fields `(a, λ, Λ)` on a periodic cell lattice and their
//!   moment statistics.
//! - [`grid`] and [`form`]: the torus lattice, the discrete Dirichlet form `E`,
//!   ball restrictions and the weighted ball norms `‖u‖_{r,B,θ}`.
//! - [`sparse`]: CSR storage and a Jacobi-preconditioned conjugate gradient.
//! - [`heat`]: the semigroup `P_t`, heat-kernel columns and semigroup audits.
//! - [`funcineq`]: Sobolev / Nash / Poincaré exponents, constants and audits.
//! - [`moser`]: parabolic cylinders, caloric solutions, mean-value, log-level,
//!   Harnack and oscillation audits.
//! - [`clt`]: Gaussian targets, two covariance estimators and the local CLT sweep.
//! - [`pipeline`]: run configuration, orchestration, manifests and plot data.

pub mod clt;
pub mod env;
pub mod error;
pub mod form;
pub mod funcineq;
pub mod grid;
pub mod heat;
pub mod moser;
pub mod pipeline;
pub mod serde_ext;
pub mod sparse;
pub mod stats;

pub use error::{Error, Result};
