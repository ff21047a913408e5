//! Space-time cylinders, positive caloric functions and the audits of the
//! Moser mean-value bounds, the log-level estimates, the parabolic Harnack
//! inequality and the oscillation decay.
//!
//! None of the constants `C_1 … C_7` is evaluated as a formula: every audit is
//! a constant-free ratio, a scaling law, or a comparison against an envelope
//! calibrated on the constant environment.

mod batch;
mod caloric;
mod cylinder;
mod harnack;
mod log_level;
mod mean_value;
mod oscillation;

pub use batch::{
    calibrate_envelopes, holder_samples, log_level_batch, oscillation_batch, LogLevelBatch, LogLevelParams,
    OscillationBatch, OscillationParams, HARNACK_CONSTANT, HOLDER_C, HOLDER_THETA, LOG_LEVEL_DOUBLING, LOG_LEVEL_SPREAD,
};
pub use caloric::{
    evolve_window, make_caloric, make_caloric_batch, origins_in_half_ball, CaloricSource, CylinderView, Solution,
    MAX_FALLBACKS,
};
pub use cylinder::{cylinders, CylinderKind, CylinderSet, Ladder, MoserSchedule, ParabolicCylinder};
pub use harnack::{
    harnack_batch, harnack_ratio, harnack_solutions, HarnackAudit, HarnackParams, HarnackRecord, RATIO_TOLERANCE,
};
pub use log_level::{log_constant, log_level_audit, LogLevelReport, LEVELS};
pub use mean_value::{gap_sweep, mean_value_audit, GapSweep, MeanValueDirection, MeanValueReport, MeanValueSetup, GAPS, GAP_SLACK};
pub use oscillation::{
    contraction_check, lclt_modulus, oscillation_decay, rescaled_oscillation, ContractionCheck, HolderEnvelope,
    OscillationReport, RescaledOscillation, CONTRACTION_SLACK,
};
