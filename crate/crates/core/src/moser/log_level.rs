//! Level sets of `log u` on `K^±` measured against `ℓ^{−1}`.

use serde::{Deserialize, Serialize};

use super::caloric::Solution;
use super::cylinder::{CylinderKind, CylinderSet, ParabolicCylinder};
use crate::form::{radial_cutoff, FormMatrix};
use crate::funcineq::ConstantReport;
use crate::grid::ball_volume;
use crate::serde_ext::ext_f64;
use crate::{Error, Result};

/// Levels of the default sweep.
pub const LEVELS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLevelReport {
    pub center: usize,
    pub top: f64,
    pub radius: f64,
    pub tau: f64,
    pub delta: f64,
    pub kappa: f64,
    /// `k(u, κ)`: the `η²Λ`-weighted mean of `−log u` at `s' = s − κτr²`.
    pub k: f64,
    /// Sample time used for `s'`.
    pub k_time: f64,
    pub levels: Vec<f64>,
    /// `γ^Λ{K⁺ : log u < −ℓ − k}` per level.
    pub sub_measure: Vec<f64>,
    /// `γ^Λ{K⁻ : log u > ℓ − k}` per level.
    pub super_measure: Vec<f64>,
    /// `ℓ · max(sub, super)` per level.
    pub weighted: Vec<f64>,
    /// `m^Λ(B) M^{B,Λ} |B|^{2/d} (C_P^{B,Λ} ∨ τ²)`.
    pub normalizer: f64,
    /// Largest `weighted / normalizer`.
    pub normalized_max: f64,
    /// Largest over smallest positive `weighted` (1 when fewer than two are positive).
    #[serde(with = "ext_f64")]
    pub spread: f64,
    /// Largest `weighted[i+1] / weighted[i]` over consecutive positive levels.
    #[serde(with = "ext_f64")]
    pub doubling_growth: f64,
}

fn nearest_index(times: &[f64], t: f64) -> usize {
    (0..times.len())
        .min_by(|&a, &b| (times[a] - t).abs().total_cmp(&(times[b] - t).abs()))
        .unwrap()
}

/// `k(u, κ)` for the cylinder set (cutoff `(1 − |x − z|/r)_+` on `B(x, r)`).
pub fn log_constant(u: &Solution, form: &FormMatrix, cyl: &CylinderSet) -> Result<(f64, f64)> {
    let q = cyl.get(CylinderKind::Q);
    let s_prime = cyl.top - cyl.kappa * cyl.tau * cyl.radius * cyl.radius;
    let view = u.view(q)?;
    let k_idx = nearest_index(&u.times, s_prime);
    let eta = radial_cutoff(&form.grid, cyl.center, cyl.radius);
    let mut num = 0.0;
    let mut den = 0.0;
    for (&l, &s) in view.local.iter().zip(&view.sites) {
        let v = u.values[k_idx][l];
        if !(v > 0.0) {
            return Err(Error::Positivity(format!("solution reaches {v:e} at site {s}")));
        }
        let w = eta[s] * eta[s] * form.speed[s];
        num += w * (-v.ln());
        den += w;
    }
    Ok((num / den, u.times[k_idx]))
}

/// `Λ`-weighted fraction of the samples of `cyl` where `pred(log u)` holds.
fn level_fraction(u: &Solution, form: &FormMatrix, cyl: &ParabolicCylinder, pred: impl Fn(f64) -> bool) -> Result<f64> {
    let v = u.view(cyl)?;
    let mut hit = 0.0;
    let mut all = 0.0;
    for &k in &v.time_indices {
        for (&l, &s) in v.local.iter().zip(&v.sites) {
            let val = u.values[k][l];
            if !(val > 0.0) {
                return Err(Error::Positivity(format!(
                    "solution reaches {val:e} on the {:?} cylinder",
                    cyl.kind
                )));
            }
            all += form.speed[s];
            if pred(val.ln()) {
                hit += form.speed[s];
            }
        }
    }
    Ok(hit / all)
}

/// `γ^Λ(cyl) = |I| · Σ_B Λ h^d`.
fn cylinder_measure(form: &FormMatrix, cyl: &ParabolicCylinder) -> f64 {
    cyl.duration() * cyl.sites.iter().map(|&s| form.mass[s]).sum::<f64>()
}

pub fn log_level_audit(
    u: &Solution,
    form: &FormMatrix,
    cyl: &CylinderSet,
    constants: &ConstantReport,
    levels: &[f64],
) -> Result<LogLevelReport> {
    if levels.is_empty() || levels.iter().any(|&l| !(l > 0.0)) || levels.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("levels must be positive and ascending".into()));
    }
    if constants.center != cyl.center || (constants.radius - cyl.radius).abs() > 1e-12 * cyl.radius {
        return Err(Error::InvalidArgument(format!(
            "constants belong to B({}, {}), cylinders to B({}, {})",
            constants.center, constants.radius, cyl.center, cyl.radius
        )));
    }
    let (k, k_time) = log_constant(u, form, cyl)?;
    let (kp, km) = (cyl.get(CylinderKind::KPlus), cyl.get(CylinderKind::KMinus));
    let (gp, gm) = (cylinder_measure(form, kp), cylinder_measure(form, km));
    let mut sub_measure = Vec::with_capacity(levels.len());
    let mut super_measure = Vec::with_capacity(levels.len());
    for &l in levels {
        sub_measure.push(gp * level_fraction(u, form, kp, |lu| lu < -l - k)?);
        super_measure.push(gm * level_fraction(u, form, km, |lu| lu > l - k)?);
    }
    let weighted: Vec<f64> = levels
        .iter()
        .zip(sub_measure.iter().zip(&super_measure))
        .map(|(l, (a, b))| l * a.max(*b))
        .collect();
    let d = form.grid.d as f64;
    let m_lambda: f64 = cyl.get(CylinderKind::Q).sites.iter().map(|&s| form.mass[s]).sum();
    let normalizer = m_lambda
        * constants.m_weighted
        * ball_volume(form.grid.d, cyl.radius).powf(2.0 / d)
        * constants.c_p_weighted.max(cyl.tau * cyl.tau);
    let normalized_max = weighted.iter().map(|w| w / normalizer).fold(0.0, f64::max);
    let positive: Vec<f64> = weighted.iter().copied().filter(|&w| w > 0.0).collect();
    let spread = if positive.len() < 2 {
        1.0
    } else {
        positive.iter().copied().fold(0.0, f64::max) / positive.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let doubling_growth = weighted
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    Ok(LogLevelReport {
        center: cyl.center,
        top: cyl.top,
        radius: cyl.radius,
        tau: cyl.tau,
        delta: cyl.delta,
        kappa: cyl.kappa,
        k,
        k_time,
        levels: levels.to_vec(),
        sub_measure,
        super_measure,
        weighted,
        normalizer,
        normalized_max,
        spread,
        doubling_growth,
    })
}

#[cfg(test)]
mod tests {
    use super::super::caloric::{make_caloric_batch, CaloricSource};
    use super::super::cylinder::cylinders;
    use super::*;
    use crate::env::{generate_environment, EnvironmentSpec, Model};
    use crate::form::{assemble_form, Ball};
    use crate::funcineq::{constants, exponents};
    use crate::heat::HeatOptions;

    #[test]
    fn constant_solution_has_empty_level_sets() {
        let s = generate_environment(&EnvironmentSpec::new(2, 32, Model::Lognormal { sigma: 0.5, correlation_length: 3.0 }, 1)).unwrap();
        let f = assemble_form(&s, &s.grid).unwrap();
        let c = 2.5;
        let u = make_caloric_batch(&f, &[(CaloricSource::Constant { value: c }, 0)], 64.0, None, &HeatOptions::default())
            .unwrap()
            .pop()
            .unwrap();
        let x = f.grid.center_site();
        let cyl = cylinders(&f.grid, x, 64.0, 8.0, 1.0, 0.5, 0.5).unwrap();
        let cr = constants(&s, &Ball::new(&f.grid, x, 8.0).unwrap(), &exponents(4.0, 4.0, 2).unwrap(), None).unwrap();
        let rep = log_level_audit(&u, &f, &cyl, &cr, &LEVELS).unwrap();
        assert!((rep.k + c.ln()).abs() < 1e-9);
        assert!(rep.weighted.iter().all(|&w| w == 0.0));
        assert_eq!(rep.spread, 1.0);
    }

    #[test]
    fn k_shifts_by_log_of_the_factor() {
        let s = generate_environment(&EnvironmentSpec::new(2, 32, Model::Constant, 1)).unwrap();
        let f = assemble_form(&s, &s.grid).unwrap();
        let x = f.grid.center_site();
        let u = make_caloric_batch(&f, &[(CaloricSource::ShiftedKernel { origin: x + 3, t0: 4.0 }, 0)], 64.0, None, &HeatOptions::default())
            .unwrap()
            .pop()
            .unwrap();
        let cyl = cylinders(&f.grid, x, 64.0, 8.0, 1.0, 0.5, 0.5).unwrap();
        let (k, _) = log_constant(&u, &f, &cyl).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let (kc, _) = log_constant(&u.scaled(c), &f, &cyl).unwrap();
            assert!((kc - (k - f64::ln(c))).abs() < 1e-12 * k.abs().max(1.0));
        }
    }
}
