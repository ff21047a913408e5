//! Exponents, ball constants and empirical audits of the local Sobolev, Nash
//! and Poincaré inequalities.
//!
//! Every inequality is audited as `LHS / RHS₀` where `RHS₀` is the right-hand
//! side with the ball constant removed. The hidden dimensional factor `c(d)`
//! comes from a calibration on the constant environment, shipped with the
//! crate as `calibration.json`.

mod audit;
pub mod calibration;
mod constants;
mod exponents;
mod testfn;

pub use audit::{audit_inequality, AuditReport, Inequality, InequalityAuditor};
pub use calibration::Calibration;
pub use constants::{
    constants, dyadic_radii, extreme_pairs, proportional_pair, stabilization_over, stabilization_radius,
    ConstantReport, PoincarePair, StabilizationReport,
};
pub use exponents::{admissible, exponents, ExponentSet};
pub use testfn::{smoothed_noise, trial_seed, Support};
