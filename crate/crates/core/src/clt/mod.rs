//! Limiting covariance `Σ` by two estimators and the local CLT sweep.
//!
//! `Σ_est` is the second moment of kernel columns; the corrector route gives
//! `Σ = 2 a_hom / a_Λ`. A sweep only uses the corrector value after the two
//! agree within [`CROSS_CHECK_TOLERANCE`].

mod corrector;
mod sweep;
mod target;

pub use corrector::{corrector_for_form, sigma_from_corrector, solve_corrector, CorrectorField, CORRECTOR_TOLERANCE};
pub use sweep::{
    clt_sweep, interval_grid, CltPoint, CltSweepResult, EpsilonResult, JDiagnostics, Trend, DEFAULT_EPSILONS,
    DEFAULT_INTERVAL,
};
pub use target::{
    gaussian_kernel, guard_time, mean_speed, relative_operator_gap, second_moment, sigma_cross_check, sigma_drift,
    sigma_second_moment, sigma_second_moment_over, CltTarget, CrossCheck, SigmaMethod, CROSS_CHECK_TIME_FRACTION,
    CROSS_CHECK_TOLERANCE,
};
