//! Oscillation decay on dyadic cylinders and the rescaled kernel modulus.

use serde::{Deserialize, Serialize};

use super::caloric::Solution;
use super::cylinder::{cylinders, CylinderKind, ParabolicCylinder};
use super::harnack::harnack_ratio;
use crate::form::FormMatrix;
use crate::heat::{check_torus_guard, kernel_snapshots, HeatOptions};
use crate::stats::linear_fit;
use crate::{Error, Result};

/// Slack added to the contraction bound `1 − 1/(4 C_H)`.
pub const CONTRACTION_SLACK: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub center: usize,
    pub t0: f64,
    pub radii: Vec<f64>,
    /// `osc(u, Q_k)` for `Q_k = (t₀ − r_k², t₀) × B(x, r_k)`.
    pub oscillations: Vec<f64>,
    /// Harnack ratio of `u` on `Q_k` (`τ = 1`, `δ = 1/2`), when resolvable.
    pub harnack: Vec<Option<f64>>,
    /// `osc(Q_{k+1}) / osc(Q_k)` (0 when `osc(Q_k) = 0`).
    pub contractions: Vec<f64>,
    /// Geometric mean of the contractions.
    pub fitted_factor: f64,
}

/// Oscillations on `Q_k`, `r_k = 2^{−k} r₀`, `k = 0..=k_max`.
pub fn oscillation_decay(u: &Solution, form: &FormMatrix, x: usize, t0: f64, r0: f64, k_max: usize) -> Result<OscillationReport> {
    if k_max < 1 {
        return Err(Error::InvalidArgument("need at least two levels".into()));
    }
    let h = form.grid.h;
    let radii: Vec<f64> = (0..=k_max).map(|k| r0 * 0.5f64.powi(k as i32)).collect();
    if radii[k_max] < 4.0 * h * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "r_{k_max} = {} is below 4h = {}",
            radii[k_max],
            4.0 * h
        )));
    }
    let mut oscillations = Vec::with_capacity(radii.len());
    let mut harnack = Vec::with_capacity(radii.len());
    for &r in &radii {
        let q = ParabolicCylinder::new(&form.grid, CylinderKind::Q, x, t0, r, 1.0, 1.0, 0.5)?;
        let vals = u.cylinder_values(&q)?;
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        oscillations.push(max - min);
        let ratio = cylinders(&form.grid, x, t0, r, 1.0, 0.5, 0.5)
            .and_then(|c| harnack_ratio(u, &c))
            .ok()
            .map(|rec| rec.ratio);
        harnack.push(ratio);
    }
    let contractions: Vec<f64> = oscillations
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let fitted_factor = if contractions.iter().all(|&c| c > 0.0) {
        (contractions.iter().map(|c| c.ln()).sum::<f64>() / contractions.len() as f64).exp()
    } else {
        0.0
    };
    Ok(OscillationReport {
        center: x,
        t0,
        radii,
        oscillations,
        harnack,
        contractions,
        fitted_factor,
    })
}

/// Joint check of a batch: per level, the largest contraction against
/// `1 − 1/(4 C_H) + slack` with `C_H` the largest Harnack ratio of the batch
/// at that level. Levels with `r_k` not above the stabilization radius are
/// reported but not checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub radii: Vec<f64>,
    pub measured_ch: Vec<Option<f64>>,
    pub worst_contraction: Vec<f64>,
    pub bound: Vec<Option<f64>>,
    pub checked: Vec<bool>,
    pub slack: f64,
    pub stabilization_radius: f64,
    pub pass: bool,
}

pub fn contraction_check(reports: &[OscillationReport], stabilization_radius: f64, slack: f64) -> Result<ContractionCheck> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no oscillation reports".into()))?;
    if reports.iter().any(|r| r.radii != first.radii) {
        return Err(Error::InvalidArgument("reports use different radii".into()));
    }
    let levels = first.contractions.len();
    let mut measured_ch = Vec::with_capacity(levels);
    let mut worst = Vec::with_capacity(levels);
    let mut bound = Vec::with_capacity(levels);
    let mut checked = Vec::with_capacity(levels);
    let mut pass = true;
    for k in 0..levels {
        let ch = reports
            .iter()
            .map(|r| r.harnack[k])
            .try_fold(f64::NEG_INFINITY, |acc, v| v.map(|v| acc.max(v)));
        let w = reports.iter().map(|r| r.contractions[k]).fold(0.0, f64::max);
        let b = ch.filter(|c| c.is_finite()).map(|c| 1.0 - 1.0 / (4.0 * c) + slack);
        let check = first.radii[k] > stabilization_radius && b.is_some();
        if check && w > b.unwrap() {
            pass = false;
        }
        measured_ch.push(ch);
        worst.push(w);
        bound.push(b);
        checked.push(check);
    }
    Ok(ContractionCheck {
        radii: first.radii[..levels].to_vec(),
        measured_ch,
        worst_contraction: worst,
        bound,
        checked,
        slack,
        stabilization_radius,
        pass,
    })
}

/// `c (r/√t)^θ t^{−d/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderEnvelope {
    pub c: f64,
    pub theta: f64,
}

impl HolderEnvelope {
    pub fn value(&self, r: f64, t: f64, d: usize) -> f64 {
        self.c * (r / t.sqrt()).powf(self.theta) * t.powf(-0.5 * d as f64)
    }

    /// Least-squares fit of `log(v t^{d/2}) = log c + θ log(r/√t)` over `(r, t, v)`.
    pub fn fit(points: &[(f64, f64, f64)], d: usize) -> Result<HolderEnvelope> {
        if points.len() < 2 || points.iter().any(|p| !(p.2 > 0.0)) {
            return Err(Error::InvalidArgument("need two positive samples to fit the envelope".into()));
        }
        let x: Vec<f64> = points.iter().map(|p| (p.0 / p.1.sqrt()).ln()).collect();
        let y: Vec<f64> = points.iter().map(|p| (p.2 * p.1.powf(0.5 * d as f64)).ln()).collect();
        let (intercept, theta) = linear_fit(&x, &y);
        // lift c so every sample sits on or below the envelope
        let lift = x
            .iter()
            .zip(&y)
            .map(|(xi, yi)| yi - intercept - theta * xi)
            .fold(0.0, f64::max);
        Ok(HolderEnvelope {
            c: (intercept + lift).exp(),
            theta,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledOscillation {
    pub eps: f64,
    pub r: f64,
    pub t: f64,
    /// `sup_{z,y ∈ B(x,r)} ε^{−d} |p_{t/ε²}(o, z/ε) − p_{t/ε²}(o, y/ε)|`.
    pub value: f64,
    pub envelope: Option<f64>,
}

/// Site `o + x/ε` for a macroscopic offset `x`.
fn micro_site(form: &FormMatrix, o: usize, x: &[f64], eps: f64) -> usize {
    let offset: Vec<i64> = x.iter().map(|v| (v / (eps * form.grid.h)).round() as i64).collect();
    form.grid.shift(o, &offset)
}

#[allow(clippy::too_many_arguments)]
pub fn rescaled_oscillation(
    form: &FormMatrix,
    o: usize,
    x: &[f64],
    r: f64,
    t: f64,
    eps: f64,
    stabilization_radius: Option<f64>,
    envelope: Option<HolderEnvelope>,
    opts: &HeatOptions,
) -> Result<RescaledOscillation> {
    if !(eps > 0.0 && r > 0.0 && t > 0.0) {
        return Err(Error::InvalidArgument("need ε, r, t > 0".into()));
    }
    if t.sqrt() < r {
        return Err(Error::InvalidArgument(format!("need √t ≥ r (got t = {t}, r = {r})")));
    }
    if x.len() != form.grid.d {
        return Err(Error::DimensionMismatch(format!("offset has {} components", x.len())));
    }
    if let Some(s) = stabilization_radius {
        if r / eps <= s {
            return Err(Error::InvalidArgument(format!(
                "r/ε = {} does not exceed the stabilization radius {s}",
                r / eps
            )));
        }
    }
    let micro_t = t / (eps * eps);
    check_torus_guard(form, micro_t)?;
    let center = micro_site(form, o, x, eps);
    let ball = form.grid.ball_sites(center, r / eps);
    let snaps = kernel_snapshots(form, &[o], &[micro_t], opts)?;
    let col = &snaps.values[0][0];
    let max = ball.iter().map(|&s| col[s]).fold(f64::NEG_INFINITY, f64::max);
    let min = ball.iter().map(|&s| col[s]).fold(f64::INFINITY, f64::min);
    let value = eps.powi(-(form.grid.d as i32)) * (max - min);
    Ok(RescaledOscillation {
        eps,
        r,
        t,
        value,
        envelope: envelope.map(|e| e.value(r, t, form.grid.d)),
    })
}

/// `sup_{x,y ∈ B(o,r), |x−y| < r₀} sup_{t ∈ I} ε^{−d}|p(t/ε², o, x/ε) − p(t/ε², o, y/ε)|`
/// for each `r₀`.
pub fn lclt_modulus(
    form: &FormMatrix,
    o: usize,
    r: f64,
    r0s: &[f64],
    eps: f64,
    times: &[f64],
    opts: &HeatOptions,
) -> Result<Vec<f64>> {
    let grid = &form.grid;
    let micro: Vec<f64> = times.iter().map(|t| t / (eps * eps)).collect();
    check_torus_guard(form, *micro.last().ok_or_else(|| Error::InvalidArgument("no times".into()))?)?;
    let snaps = kernel_snapshots(form, &[o], &micro, opts)?;
    let ball = grid.ball_sites(o, r / eps);
    let mut inside = vec![false; grid.num_sites()];
    ball.iter().for_each(|&s| inside[s] = true);
    let scale = eps.powi(-(grid.d as i32));
    r0s.iter()
        .map(|&r0| {
            let reach = r0 / eps;
            // offsets strictly shorter than r₀/ε
            let offsets: Vec<usize> = grid
                .ball_sites(o, reach)
                .into_iter()
                .filter(|&s| grid.distance(o, s) < reach * (1.0 - 1e-12))
                .collect();
            let lattice: Vec<Vec<i64>> = offsets.iter().map(|&s| grid.offset(o, s)).collect();
            let mut best = 0.0f64;
            for cols in &snaps.values {
                let col = &cols[0];
                for &a in &ball {
                    for off in &lattice {
                        let b = grid.shift(a, off);
                        if inside[b] {
                            best = best.max((col[a] - col[b]).abs());
                        }
                    }
                }
            }
            Ok(scale * best)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::caloric::{make_caloric_batch, CaloricSource};
    use super::*;
    use crate::env::{generate_environment, EnvironmentSpec, Model};
    use crate::form::assemble_form;

    fn constant_form(n: usize) -> FormMatrix {
        let s = generate_environment(&EnvironmentSpec::new(2, n, Model::Constant, 1)).unwrap();
        assemble_form(&s, &s.grid).unwrap()
    }

    #[test]
    fn constant_solution_does_not_oscillate() {
        let f = constant_form(32);
        let u = make_caloric_batch(&f, &[(CaloricSource::Constant { value: 2.0 }, 0)], 64.0, None, &HeatOptions::default())
            .unwrap()
            .pop()
            .unwrap();
        let rep = oscillation_decay(&u, &f, f.grid.center_site(), 64.0, 8.0, 1).unwrap();
        assert!(rep.oscillations.iter().all(|&o| o.abs() < 1e-9));
    }

    #[test]
    fn kernel_oscillations_decrease() {
        let f = constant_form(64);
        let x = f.grid.center_site();
        let u = make_caloric_batch(&f, &[(CaloricSource::ShiftedKernel { origin: x, t0: 16.0 }, 0)], 256.0, None, &HeatOptions::default())
            .unwrap()
            .pop()
            .unwrap();
        let rep = oscillation_decay(&u, &f, x, 256.0, 16.0, 2).unwrap();
        assert!(rep.oscillations.windows(2).all(|w| w[1] < w[0]), "{:?}", rep.oscillations);
        let chk = contraction_check(&[rep], 4.0, CONTRACTION_SLACK).unwrap();
        assert!(chk.pass, "{chk:?}");
    }

    #[test]
    fn too_few_levels_or_small_radii_are_rejected() {
        let f = constant_form(32);
        let u = make_caloric_batch(&f, &[(CaloricSource::Constant { value: 1.0 }, 0)], 64.0, None, &HeatOptions::default())
            .unwrap()
            .pop()
            .unwrap();
        assert!(oscillation_decay(&u, &f, 0, 64.0, 8.0, 0).is_err());
        assert!(oscillation_decay(&u, &f, 0, 64.0, 8.0, 2).is_err());
    }

    #[test]
    fn envelope_fit_recovers_a_power_law() {
        let pts: Vec<(f64, f64, f64)> = [(1.0, 4.0), (2.0, 4.0), (1.0, 16.0), (3.0, 16.0)]
            .iter()
            .map(|&(r, t)| (r, t, 0.7 * (r / f64::sqrt(t)).powf(0.8) / t))
            .collect();
        let e = HolderEnvelope::fit(&pts, 2).unwrap();
        assert!((e.c - 0.7).abs() < 1e-9 && (e.theta - 0.8).abs() < 1e-9);
    }

    #[test]
    fn modulus_shrinks_with_r0() {
        let f = constant_form(128);
        let o = f.grid.center_site();
        let m = lclt_modulus(&f, o, 1.0, &[0.5, 0.25, 0.125], 0.125, &[0.25, 0.5], &HeatOptions::default()).unwrap();
        assert!(m.windows(2).all(|w| w[1] <= w[0]) && m[0] > 0.0, "{m:?}");
    }
}
