//! Mean-value bounds of Moser type, audited through their gap dependence.
//!
//! For gaps `g = σ − σ'` the constant-free ratio `R(g) = LHS/RHS` is compared
//! with the bound's power `g^{−e}`: the scaled value `R(g)·g^e` may not grow
//! by more than a factor 2 when the gap is halved.

use serde::{Deserialize, Serialize};

use super::caloric::Solution;
use super::cylinder::{CylinderKind, ParabolicCylinder};
use crate::form::FormMatrix;
use crate::serde_ext::ext_f64;
use crate::stats::linear_fit;
use crate::{Error, Result};

/// Gaps of the default sweep (`σ = 1`).
pub const GAPS: [f64; 3] = [0.5, 0.25, 0.125];
/// Allowed growth of `R(g)·g^e` per halving of the gap.
pub const GAP_SLACK: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanValueDirection {
    /// `sup_{Q_σ'} u` against `‖u‖_{2,Q_σ,Λ}`.
    SubSupBound,
    /// `sup_{Q_σ'} u^{−α}` against `‖u^{−1}‖^α_{α,Q_σ,Λ}`.
    SuperNegPower,
    /// `‖u‖_{α₀,Q'_σ',Λ}` against `‖u‖_{α,Q'_σ,Λ}`.
    SuperSmallAlpha,
}

impl MeanValueDirection {
    pub const ALL: [MeanValueDirection; 3] = [
        MeanValueDirection::SubSupBound,
        MeanValueDirection::SuperNegPower,
        MeanValueDirection::SuperSmallAlpha,
    ];

    /// Power `e` of `1/g` in the bound.
    pub fn gap_exponent(self, nu: f64, alpha: f64, alpha0: f64) -> f64 {
        match self {
            MeanValueDirection::SubSupBound => 2.0 * nu / (2.0 * nu - 2.0),
            MeanValueDirection::SuperNegPower => 2.0 * nu / (nu - 1.0),
            MeanValueDirection::SuperSmallAlpha => {
                2.0 * nu / (nu - 1.0) * (1.0 + nu) * (1.0 / alpha - 1.0 / alpha0)
            }
        }
    }
}

/// Cylinder family `(x, s, r, τ)` and the exponents of one audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanValueSetup {
    pub center: usize,
    pub top: f64,
    pub radius: f64,
    pub tau: f64,
    pub nu: f64,
    /// Power of the supercaloric bounds (`α < α₀/ν` for the close-to-zero bound).
    pub alpha: f64,
    pub alpha0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanValueReport {
    pub direction: MeanValueDirection,
    pub sigma: f64,
    pub sigma_prime: f64,
    pub gap: f64,
    pub lhs: f64,
    pub rhs: f64,
    #[serde(with = "ext_f64")]
    pub ratio: f64,
    pub gap_exponent: f64,
    /// `R(g)·g^e`.
    #[serde(with = "ext_f64")]
    pub scaled: f64,
}

/// `(Σ Λ|f|^p / #samples)^{1/p}` over a cylinder.
fn cylinder_norm(u: &Solution, form: &FormMatrix, cyl: &ParabolicCylinder, f: impl Fn(f64) -> f64, p: f64) -> Result<f64> {
    let v = u.view(cyl)?;
    let mut sum = 0.0;
    for &k in &v.time_indices {
        for (&l, &s) in v.local.iter().zip(&v.sites) {
            sum += form.speed[s] * f(u.values[k][l]).abs().powf(p);
        }
    }
    let count = (v.time_indices.len() * v.sites.len()) as f64;
    Ok((sum / count).powf(1.0 / p))
}

fn check_cylinder(u: &Solution, cyl: &ParabolicCylinder) -> Result<()> {
    let v = u.view(cyl)?;
    if v.time_indices.len() < 2 || v.sites.len() < 2 {
        return Err(Error::DegenerateCylinder(format!(
            "{:?} with σ = {} holds {} time steps and {} sites",
            cyl.kind,
            cyl.delta,
            v.time_indices.len(),
            v.sites.len()
        )));
    }
    Ok(())
}

pub fn mean_value_audit(
    u: &Solution,
    form: &FormMatrix,
    setup: &MeanValueSetup,
    direction: MeanValueDirection,
    sigma: f64,
    sigma_prime: f64,
) -> Result<MeanValueReport> {
    if !(0.5 <= sigma_prime && sigma_prime < sigma && sigma <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 1/2 ≤ σ' < σ ≤ 1 (got σ = {sigma}, σ' = {sigma_prime})"
        )));
    }
    if !(setup.nu > 1.0) {
        return Err(Error::InvalidArgument(format!("ν must exceed 1 (got {})", setup.nu)));
    }
    let (alpha, alpha0) = (setup.alpha, setup.alpha0);
    match direction {
        MeanValueDirection::SuperNegPower if !(alpha > 0.0) => {
            return Err(Error::InvalidArgument(format!("α must be positive (got {alpha})")));
        }
        MeanValueDirection::SuperSmallAlpha if !(alpha0 > 0.0 && alpha0 < setup.nu && alpha > 0.0 && alpha < alpha0 / setup.nu) => {
            return Err(Error::InvalidArgument(format!(
                "need 0 < α < α₀/ν and 0 < α₀ < ν (got α = {alpha}, α₀ = {alpha0}, ν = {})",
                setup.nu
            )));
        }
        _ => {}
    }
    let kind = match direction {
        MeanValueDirection::SuperSmallAlpha => CylinderKind::QPrime,
        _ => CylinderKind::QSigma,
    };
    let grid = &form.grid;
    let make = |frac: f64| {
        ParabolicCylinder::new(grid, kind, setup.center, setup.top, setup.radius, setup.tau, frac, 0.5)
    };
    let (inner, outer) = (make(sigma_prime)?, make(sigma)?);
    check_cylinder(u, &inner)?;
    check_cylinder(u, &outer)?;
    let inner_values = u.cylinder_values(&inner)?;
    if direction != MeanValueDirection::SubSupBound {
        let all = u.cylinder_values(&outer)?;
        if let Some(bad) = all.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Positivity(format!("solution reaches {bad:e} on the outer cylinder")));
        }
    }
    let (lhs, rhs) = match direction {
        MeanValueDirection::SubSupBound => (
            inner_values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            cylinder_norm(u, form, &outer, |v| v, 2.0)?,
        ),
        MeanValueDirection::SuperNegPower => (
            inner_values.iter().map(|v| v.powf(-alpha)).fold(f64::NEG_INFINITY, f64::max),
            cylinder_norm(u, form, &outer, |v| 1.0 / v, alpha)?.powf(alpha),
        ),
        MeanValueDirection::SuperSmallAlpha => (
            cylinder_norm(u, form, &inner, |v| v, alpha0)?,
            cylinder_norm(u, form, &outer, |v| v, alpha)?,
        ),
    };
    let gap = sigma - sigma_prime;
    let e = direction.gap_exponent(setup.nu, alpha, alpha0);
    let ratio = lhs / rhs;
    Ok(MeanValueReport {
        direction,
        sigma,
        sigma_prime,
        gap,
        lhs,
        rhs,
        ratio,
        gap_exponent: e,
        scaled: ratio * gap.powf(e),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSweep {
    pub direction: MeanValueDirection,
    pub reports: Vec<MeanValueReport>,
    pub gap_exponent: f64,
    /// `−slope` of `log R` against `log g`.
    pub fitted_exponent: f64,
    /// `R(g/2)·(g/2)^e ≤ 2·R(g)·g^e` at every halving.
    pub scaling_ok: bool,
}

/// Audits the gaps `1/2, 1/4, 1/8` with `σ = 1`.
pub fn gap_sweep(
    u: &Solution,
    form: &FormMatrix,
    setup: &MeanValueSetup,
    direction: MeanValueDirection,
) -> Result<GapSweep> {
    let reports = GAPS
        .iter()
        .map(|&g| mean_value_audit(u, form, setup, direction, 1.0, 1.0 - g))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = reports.iter().map(|r| r.gap.ln()).collect();
    let y: Vec<f64> = reports.iter().map(|r| r.ratio.ln()).collect();
    let (_, slope) = linear_fit(&x, &y);
    let scaling_ok = reports
        .windows(2)
        .all(|w| w[1].scaled <= GAP_SLACK * w[0].scaled * (1.0 + 1e-12));
    Ok(GapSweep {
        direction,
        gap_exponent: reports[0].gap_exponent,
        fitted_exponent: -slope,
        scaling_ok,
        reports,
    })
}
