//! Batches of shifted kernel columns for the log-level and oscillation audits,
//! and the envelopes calibrated on the constant environment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::caloric::{make_caloric_batch, origins_in_half_ball, CaloricSource, Solution};
use super::cylinder::cylinders;
use super::harnack::{harnack_batch, HarnackParams};
use super::log_level::{log_level_audit, LogLevelReport, LEVELS};
use super::oscillation::{
    contraction_check, oscillation_decay, rescaled_oscillation, ContractionCheck, HolderEnvelope, OscillationReport,
    CONTRACTION_SLACK,
};
use crate::env::{generate_environment, EnvironmentSpec, FieldSample, Model};
use crate::form::{assemble_form, Ball, FormMatrix};
use crate::funcineq::{constants, exponents, ExponentSet};
use crate::heat::HeatOptions;
use crate::serde_ext::ext_f64;
use crate::{Error, Result};

/// Envelope keys in the calibration file.
pub const LOG_LEVEL_SPREAD: &str = "log_level_spread";
pub const LOG_LEVEL_DOUBLING: &str = "log_level_doubling";
pub const HOLDER_C: &str = "holder_c";
pub const HOLDER_THETA: &str = "holder_theta";
pub const HARNACK_CONSTANT: &str = "harnack_constant";

/// Shifted kernels `p_{t₀ + t}(o_k, ·)`, origins in `B(x, r/2)`, on `[0, horizon]`.
fn kernel_batch(
    form: &FormMatrix,
    x: usize,
    r: f64,
    count: usize,
    seed: u64,
    t0: f64,
    horizon: f64,
    opts: &HeatOptions,
) -> Result<(Vec<usize>, Vec<Solution>)> {
    if count == 0 {
        return Err(Error::InvalidArgument("a batch needs at least one solution".into()));
    }
    let origins = origins_in_half_ball(form, x, r, count, seed);
    let sources: Vec<(CaloricSource, u64)> = origins
        .iter()
        .map(|&origin| (CaloricSource::ShiftedKernel { origin, t0 }, 0))
        .collect();
    let window = form.grid.ball_sites(x, r);
    let opts = HeatOptions {
        dt: Some(opts.dt.unwrap_or(horizon / 256.0)),
        ..opts.clone()
    };
    Ok((origins, make_caloric_batch(form, &sources, horizon, Some(&window), &opts)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLevelParams {
    pub center: usize,
    pub radius: f64,
    pub tau: f64,
    pub delta: f64,
    pub kappa: f64,
    pub solutions: usize,
    pub seed: u64,
    /// Kernel shift `t₀` as a fraction of `τr²`.
    pub shift_fraction: f64,
}

impl LogLevelParams {
    pub fn new(center: usize, radius: f64, solutions: usize, seed: u64) -> Self {
        Self {
            center,
            radius,
            tau: 1.0,
            delta: 0.5,
            kappa: 0.5,
            solutions,
            seed,
            shift_fraction: 1.0 / 16.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogLevelBatch {
    pub params: LogLevelParams,
    pub levels: Vec<f64>,
    pub origins: Vec<usize>,
    pub reports: Vec<LogLevelReport>,
    #[serde(with = "ext_f64")]
    pub max_spread: f64,
    #[serde(with = "ext_f64")]
    pub max_doubling: f64,
    pub max_normalized: f64,
    /// Calibrated bound on the spread, when supplied.
    pub envelope: Option<f64>,
    /// `max_spread ≤ envelope`.
    pub pass: Option<bool>,
}

/// Log-level audits of a batch of shifted kernels on `(0, τr²) × B(x, r)`.
pub fn log_level_batch(
    sample: &FieldSample,
    form: &FormMatrix,
    params: &LogLevelParams,
    exps: &ExponentSet,
    levels: &[f64],
    envelope: Option<f64>,
    opts: &HeatOptions,
) -> Result<LogLevelBatch> {
    let horizon = params.tau * params.radius * params.radius;
    let cyl = cylinders(
        &form.grid,
        params.center,
        horizon,
        params.radius,
        params.tau,
        params.delta,
        params.kappa,
    )?;
    let cr = constants(sample, &Ball::new(&form.grid, params.center, params.radius)?, exps, None)?;
    let (origins, sols) = kernel_batch(
        form,
        params.center,
        params.radius,
        params.solutions,
        params.seed,
        params.shift_fraction * horizon,
        horizon,
        opts,
    )?;
    let reports = sols
        .iter()
        .map(|u| log_level_audit(u, form, &cyl, &cr, levels))
        .collect::<Result<Vec<_>>>()?;
    let max_spread = reports.iter().map(|r| r.spread).fold(0.0, f64::max);
    let max_doubling = reports.iter().map(|r| r.doubling_growth).fold(0.0, f64::max);
    let max_normalized = reports.iter().map(|r| r.normalized_max).fold(0.0, f64::max);
    Ok(LogLevelBatch {
        params: params.clone(),
        levels: levels.to_vec(),
        origins,
        reports,
        max_spread,
        max_doubling,
        max_normalized,
        envelope,
        pass: envelope.map(|e| max_spread <= e),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationParams {
    pub center: usize,
    pub r0: f64,
    pub k_max: usize,
    pub solutions: usize,
    pub seed: u64,
    /// Kernel shift `t₀` as a fraction of `r₀²`.
    pub shift_fraction: f64,
}

impl OscillationParams {
    pub fn new(center: usize, r0: f64, k_max: usize, solutions: usize, seed: u64) -> Self {
        Self {
            center,
            r0,
            k_max,
            solutions,
            seed,
            shift_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OscillationBatch {
    pub params: OscillationParams,
    pub origins: Vec<usize>,
    pub reports: Vec<OscillationReport>,
    pub check: ContractionCheck,
}

/// Oscillation decay on `Q_k = (r₀² − r_k², r₀²) × B(x, r_k)` for a batch of
/// shifted kernels, checked against the per-level Harnack constants.
pub fn oscillation_batch(
    form: &FormMatrix,
    params: &OscillationParams,
    stabilization_radius: f64,
    opts: &HeatOptions,
) -> Result<OscillationBatch> {
    let top = params.r0 * params.r0;
    let (origins, sols) = kernel_batch(
        form,
        params.center,
        params.r0,
        params.solutions,
        params.seed,
        params.shift_fraction * top,
        top,
        opts,
    )?;
    let reports = sols
        .iter()
        .map(|u| oscillation_decay(u, form, params.center, top, params.r0, params.k_max))
        .collect::<Result<Vec<_>>>()?;
    let check = contraction_check(&reports, stabilization_radius, CONTRACTION_SLACK)?;
    Ok(OscillationBatch {
        params: params.clone(),
        origins,
        reports,
        check,
    })
}

/// `(r, t, value)` samples of the rescaled oscillation on the constant
/// environment with `ε = 1`, the input of [`HolderEnvelope::fit`].
pub fn holder_samples(form: &FormMatrix, radii: &[f64], times: &[f64], opts: &HeatOptions) -> Result<Vec<(f64, f64, f64)>> {
    let o = form.grid.center_site();
    let d = form.grid.d;
    let mut out = Vec::new();
    for &t in times {
        for &r in radii {
            if t.sqrt() < r {
                continue;
            }
            let x = vec![0.0; d];
            let v = rescaled_oscillation(form, o, &x, r, t, 1.0, None, None, opts)?;
            out.push((r, t, v.value));
        }
    }
    Ok(out)
}

/// Raw envelopes measured on the constant environment (`d = 2`):
/// the largest log-level spread and doubling growth over 20 solutions, the
/// Harnack constant, and the Hölder envelope `(c, θ)`.
pub fn calibrate_envelopes() -> Result<BTreeMap<String, f64>> {
    let sample = generate_environment(&EnvironmentSpec::new(2, 64, Model::Constant, 2024))?;
    let form = assemble_form(&sample, &sample.grid)?;
    let x = form.grid.center_site();
    let exps = exponents(4.0, 4.0, 2)?;
    let opts = HeatOptions::default();
    let mut out = BTreeMap::new();
    let log = log_level_batch(&sample, &form, &LogLevelParams::new(x, 16.0, 20, 2024), &exps, &LEVELS, None, &opts)?;
    out.insert(LOG_LEVEL_SPREAD.to_string(), log.max_spread);
    out.insert(LOG_LEVEL_DOUBLING.to_string(), log.max_doubling);
    let harnack = harnack_batch(&sample, &form, &HarnackParams::new(x, 8.0, 20, 2024), &opts, true, None)?;
    out.insert(HARNACK_CONSTANT.to_string(), harnack.measured);
    let big = generate_environment(&EnvironmentSpec::new(2, 128, Model::Constant, 2024))?;
    let big_form = assemble_form(&big, &big.grid)?;
    let samples = holder_samples(&big_form, &[1.0, 2.0, 4.0], &[16.0, 48.0], &opts)?;
    let env = HolderEnvelope::fit(&samples, 2)?;
    out.insert(HOLDER_C.to_string(), env.c);
    out.insert(HOLDER_THETA.to_string(), env.theta);
    Ok(out)
}
