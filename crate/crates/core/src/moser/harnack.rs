//! Parabolic Harnack ratios `sup_{Q_-} u / inf_{Q_+} u`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::caloric::{make_caloric_batch, origins_in_half_ball, CaloricSource, Solution};
use super::cylinder::{cylinders, CylinderKind, CylinderSet};
use crate::env::FieldSample;
use crate::form::FormMatrix;
use crate::heat::{HeatOptions, SchemeRecord};
use crate::serde_ext::ext_f64;
use crate::{Error, Result};

/// Ratios below `1 − RATIO_TOLERANCE` are flagged.
pub const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackRecord {
    pub sup_minus: f64,
    pub inf_plus: f64,
    #[serde(with = "ext_f64")]
    pub ratio: f64,
    /// The ratio fell below `1 − 1e-9`.
    pub flagged: bool,
}

/// Smallest value of `u` on a cylinder; errors when it is not positive.
fn positive_min(u: &Solution, cyl: &super::cylinder::ParabolicCylinder) -> Result<f64> {
    let vals = u.cylinder_values(cyl)?;
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Positivity(format!(
            "solution reaches {min:e} on the {:?} cylinder",
            cyl.kind
        )));
    }
    Ok(min)
}

/// Ratio for one solution. `u` must be strictly positive on the stored part of `Q`.
pub fn harnack_ratio(u: &Solution, cyl: &CylinderSet) -> Result<HarnackRecord> {
    let q = cyl.get(CylinderKind::Q);
    let stored: Vec<usize> = q.sites.iter().copied().filter(|&s| u.value(0, s).is_some()).collect();
    let q_stored = super::cylinder::ParabolicCylinder { sites: stored, ..q.clone() };
    if !q_stored.sites.is_empty() {
        positive_min(u, &q_stored)?;
    }
    let sup_minus = u
        .cylinder_values(cyl.get(CylinderKind::QMinus))?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let inf_plus = positive_min(u, cyl.get(CylinderKind::QPlus))?;
    let ratio = sup_minus / inf_plus;
    Ok(HarnackRecord {
        sup_minus,
        inf_plus,
        ratio,
        flagged: ratio < 1.0 - RATIO_TOLERANCE,
    })
}

/// Parameters of a Harnack batch of shifted kernel columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackParams {
    pub center: usize,
    pub radius: f64,
    pub tau: f64,
    pub delta: f64,
    pub solutions: usize,
    pub seed: u64,
}

impl HarnackParams {
    pub fn new(center: usize, radius: f64, solutions: usize, seed: u64) -> Self {
        Self {
            center,
            radius,
            tau: 1.0,
            delta: 0.5,
            solutions,
            seed,
        }
    }

    /// Kernel columns start at `t₀ = τr²/4`.
    pub fn kernel_shift(&self) -> f64 {
        0.25 * self.tau * self.radius * self.radius
    }

    /// Cylinder height `τr²`, which is also the top time `s`.
    pub fn horizon(&self) -> f64 {
        self.tau * self.radius * self.radius
    }

    /// Step `τr²/256`.
    pub fn step(&self) -> f64 {
        self.horizon() / 256.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarnackAudit {
    pub environment: String,
    pub environment_id: u32,
    pub params: HarnackParams,
    pub origins: Vec<usize>,
    pub records: Vec<HarnackRecord>,
    /// `C_H`: the largest ratio of the batch.
    #[serde(with = "ext_f64")]
    pub measured: f64,
    pub all_finite: bool,
    pub flagged: usize,
    pub exponent_condition: bool,
    pub stabilization_radius: Option<f64>,
    /// `r > s(x, 1)`, when the stabilization radius is known.
    pub above_stabilization: Option<bool>,
    pub scheme: SchemeRecord,
}

impl HarnackAudit {
    pub fn ratios(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ratio).collect()
    }
}

/// Solutions `u_k(t, ·) = p_{t₀ + t}(o_k, ·)` on `[0, τr²]` stored on `δB`,
/// with origins `o_k` from [`origins_in_half_ball`].
pub fn harnack_solutions(
    form: &FormMatrix,
    params: &HarnackParams,
    opts: &HeatOptions,
) -> Result<(Vec<usize>, Vec<Solution>)> {
    let origins = origins_in_half_ball(form, params.center, params.radius, params.solutions, params.seed);
    let window = form.grid.ball_sites(params.center, params.delta * params.radius);
    let opts = HeatOptions {
        dt: Some(opts.dt.unwrap_or_else(|| params.step())),
        ..opts.clone()
    };
    let sources: Vec<(CaloricSource, u64)> = origins
        .iter()
        .map(|&origin| {
            (
                CaloricSource::ShiftedKernel {
                    origin,
                    t0: params.kernel_shift(),
                },
                0,
            )
        })
        .collect();
    let sols = make_caloric_batch(form, &sources, params.horizon(), Some(&window), &opts)?;
    Ok((origins, sols))
}

/// Runs a batch of shifted kernel columns through [`harnack_ratio`].
pub fn harnack_batch(
    sample: &FieldSample,
    form: &FormMatrix,
    params: &HarnackParams,
    opts: &HeatOptions,
    exponent_condition: bool,
    stabilization_radius: Option<f64>,
) -> Result<HarnackAudit> {
    if params.solutions == 0 {
        return Err(Error::InvalidArgument("a Harnack batch needs at least one solution".into()));
    }
    let cyl = cylinders(
        &form.grid,
        params.center,
        params.horizon(),
        params.radius,
        params.tau,
        params.delta,
        0.5,
    )?;
    let (origins, sols) = harnack_solutions(form, params, opts)?;
    let records = sols
        .par_iter()
        .map(|u| harnack_ratio(u, &cyl))
        .collect::<Result<Vec<_>>>()?;
    let measured = records.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(HarnackAudit {
        environment: sample.spec.model.name().to_string(),
        environment_id: sample.spec.model.id(),
        params: params.clone(),
        origins,
        all_finite: records.iter().all(|r| r.ratio.is_finite()),
        flagged: records.iter().filter(|r| r.flagged).count(),
        records,
        measured,
        exponent_condition,
        stabilization_radius,
        above_stabilization: stabilization_radius.map(|s| params.radius > s),
        scheme: sols[0].scheme.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_environment, EnvironmentSpec, Model};
    use crate::form::assemble_form;

    #[test]
    fn constant_solution_has_ratio_one() {
        let s = generate_environment(&EnvironmentSpec::new(2, 16, Model::IidCellPareto, 2)).unwrap();
        let f = assemble_form(&s, &s.grid).unwrap();
        let u = make_caloric_batch(&f, &[(CaloricSource::Constant { value: 3.0 }, 0)], 16.0, None, &HeatOptions::default())
            .unwrap()
            .pop()
            .unwrap();
        let cyl = cylinders(&f.grid, f.grid.center_site(), 16.0, 4.0, 1.0, 0.5, 0.5).unwrap();
        let rec = harnack_ratio(&u, &cyl).unwrap();
        assert!((rec.ratio - 1.0).abs() < 1e-9);
        assert!(!rec.flagged);
    }

    #[test]
    fn kernel_batch_ratios_exceed_one() {
        let s = generate_environment(&EnvironmentSpec::new(2, 32, Model::Constant, 2)).unwrap();
        let f = assemble_form(&s, &s.grid).unwrap();
        let p = HarnackParams::new(f.grid.center_site(), 4.0, 6, 1);
        let a = harnack_batch(&s, &f, &p, &HeatOptions::default(), true, None).unwrap();
        assert_eq!(a.records.len(), 6);
        assert!(a.all_finite && a.flagged == 0);
        assert!(a.records.iter().all(|r| r.ratio >= 1.0));
        assert_eq!(a.measured, a.ratios().into_iter().fold(0.0, f64::max));
    }

    #[test]
    fn missing_window_is_an_error() {
        let s = generate_environment(&EnvironmentSpec::new(2, 16, Model::Constant, 2)).unwrap();
        let f = assemble_form(&s, &s.grid).unwrap();
        let w = vec![0usize, 1, 2];
        let u = make_caloric_batch(&f, &[(CaloricSource::Constant { value: 1.0 }, 0)], 16.0, Some(&w), &HeatOptions::default())
            .unwrap()
            .pop()
            .unwrap();
        let cyl = cylinders(&f.grid, f.grid.center_site(), 16.0, 4.0, 1.0, 0.5, 0.5).unwrap();
        assert!(harnack_ratio(&u, &cyl).is_err());
    }
}
