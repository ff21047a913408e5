use serde::{Deserialize, Serialize};

use super::exponents::ExponentSet;
use crate::env::FieldSample;
use crate::form::{ball_norm, Ball};
use crate::serde_ext::ext_f64;
use crate::{Error, Result};

/// A Hölder pair on the line `1/p̄ + 1/q̄ = 2/d` and the weighted Poincaré
/// constant it produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincarePair {
    #[serde(with = "ext_f64")]
    pub pbar: f64,
    #[serde(with = "ext_f64")]
    pub qbar: f64,
    pub value: f64,
}

/// Ball constants of the local functional inequalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    pub center: usize,
    pub radius: f64,
    pub sites: usize,
    /// `C_S^B = ‖λ^{-1}‖_{q,B}`.
    pub c_s: f64,
    /// `C_S^{B,Λ} = ‖λ^{-1}‖_{q,B} ‖Λ‖_{p,B}^{2p*/ρ}`.
    pub c_s_weighted: f64,
    /// `C_P^B = ‖λ^{-1}‖_{d/2,B}`.
    pub c_p: f64,
    /// `C_P^{B,Λ} = ‖Λ‖_{p̄,B} ‖λ^{-1}‖_{q̄,B}` for the chosen pair.
    pub c_p_weighted: f64,
    pub poincare_pair: PoincarePair,
    /// The same constant at the two ends of the admissible segment.
    pub poincare_extremes: [PoincarePair; 2],
    /// `M^B = Φ(0)/Φ(1/2) = 2` for the cutoff `(1 − |x − z|/r)_+`.
    pub m: f64,
    /// `M^{B,Λ} = M^B ‖Λ‖_{1,B}/‖Λ‖_{1,B/2}`.
    pub m_weighted: f64,
}

fn recip(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        1.0 / x
    }
}

fn from_recip(x: f64) -> f64 {
    if x == 0.0 {
        f64::INFINITY
    } else {
        1.0 / x
    }
}

/// Proportional pair `(1/p̄, 1/q̄) = (2/d)/(1/p + 1/q) · (1/p, 1/q)`, or
/// `p̄ = q̄ = d` when `p = q = ∞`.
pub fn proportional_pair(exps: &ExponentSet) -> (f64, f64) {
    let (ip, iq) = (exps.inv_p(), exps.inv_q());
    let d = exps.d as f64;
    if ip + iq == 0.0 {
        return (d, d);
    }
    let k = (2.0 / d) / (ip + iq);
    (from_recip(k * ip), from_recip(k * iq))
}

/// End points of the admissible segment: `p̄ = p` and `q̄ = q` respectively.
pub fn extreme_pairs(exps: &ExponentSet) -> [(f64, f64); 2] {
    let two_d = 2.0 / exps.d as f64;
    [
        (exps.p, from_recip(two_d - exps.inv_p())),
        (from_recip(two_d - exps.inv_q()), exps.q),
    ]
}

fn check_pair(exps: &ExponentSet, (pbar, qbar): (f64, f64)) -> Result<()> {
    let sum = recip(pbar) + recip(qbar);
    let target = 2.0 / exps.d as f64;
    if (sum - target).abs() > 1e-12 || pbar > exps.p * (1.0 + 1e-12) || qbar > exps.q * (1.0 + 1e-12) {
        return Err(Error::Condition(format!(
            "pair (p̄, q̄) = ({pbar}, {qbar}) must satisfy 1/p̄ + 1/q̄ = 2/d with p̄ ≤ p, q̄ ≤ q"
        )));
    }
    if pbar < 1.0 || qbar < 1.0 {
        return Err(Error::Condition("p̄, q̄ must be ≥ 1".into()));
    }
    Ok(())
}

pub fn constants(
    sample: &FieldSample,
    ball: &Ball,
    exps: &ExponentSet,
    pbar_qbar: Option<(f64, f64)>,
) -> Result<ConstantReport> {
    let grid = &sample.grid;
    if exps.d != grid.d {
        return Err(Error::DimensionMismatch(format!(
            "exponents for d = {}, sample has d = {}",
            exps.d, grid.d
        )));
    }
    if ball.radius < 4.0 * grid.h * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "ball radius {} below 4h = {}",
            ball.radius,
            4.0 * grid.h
        )));
    }
    if !super::exponents::admissible(exps.p, exps.q, exps.d) {
        return Err(Error::Condition("no admissible (p̄, q̄): 1/p + 1/q ≥ 2/d".into()));
    }
    let inv_lower: Vec<f64> = sample.lower.iter().map(|v| 1.0 / v).collect();
    let upper = &sample.upper;
    let d = grid.d as f64;

    let c_s = ball_norm(&inv_lower, ball, exps.q, None)?;
    let c_s_weighted = c_s * ball_norm(upper, ball, exps.p, None)?.powf(exps.weight_power());
    let c_p = ball_norm(&inv_lower, ball, (d / 2.0).max(1.0), None)?;

    let pair_value = |(pb, qb): (f64, f64)| -> Result<PoincarePair> {
        Ok(PoincarePair {
            pbar: pb,
            qbar: qb,
            value: ball_norm(upper, ball, pb, None)? * ball_norm(&inv_lower, ball, qb, None)?,
        })
    };
    let pair = match pbar_qbar {
        Some(pq) => {
            check_pair(exps, pq)?;
            pq
        }
        None => proportional_pair(exps),
    };
    let poincare_pair = pair_value(pair)?;
    let [e0, e1] = extreme_pairs(exps);
    let poincare_extremes = [pair_value(e0)?, pair_value(e1)?];

    let half = Ball::new(grid, ball.center, 0.5 * ball.radius)?;
    let m = 2.0;
    let m_weighted = m * ball_norm(upper, ball, 1.0, None)? / ball_norm(upper, &half, 1.0, None)?;
    Ok(ConstantReport {
        center: ball.center,
        radius: ball.radius,
        sites: ball.sites.len(),
        c_s,
        c_s_weighted,
        c_p,
        c_p_weighted: poincare_pair.value,
        poincare_pair,
        poincare_extremes,
        m,
        m_weighted,
    })
}

/// Constants over a sweep of radii and the smallest radius past which they
/// sit within `1 + δ` of their largest-radius values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilizationReport {
    pub center: usize,
    pub delta: f64,
    pub radii: Vec<f64>,
    pub reports: Vec<ConstantReport>,
    /// `s(x, δ)`, or the torus half-width when flagged.
    pub radius: f64,
    /// The last doubling still changed some constant by more than `δ`.
    pub flagged: bool,
    /// Largest relative change of `C_S^{B,Λ}`, `C_P^{B,Λ}`, `M^{B,Λ}` over the last doubling.
    pub last_change: f64,
}

impl StabilizationReport {
    /// `(C_S^{B,Λ}, C_P^{B,Λ}, M^{B,Λ})` per radius.
    pub fn tracked(&self) -> Vec<[f64; 3]> {
        self.reports.iter().map(tracked).collect()
    }
}

fn tracked(r: &ConstantReport) -> [f64; 3] {
    [r.c_s_weighted, r.c_p_weighted, r.m_weighted]
}

/// Dyadic radii `4h, 8h, …` strictly below half the torus side.
pub fn dyadic_radii(h: f64, side: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = 4.0 * h;
    while r < 0.5 * side * (1.0 - 1e-12) {
        out.push(r);
        r *= 2.0;
    }
    out
}

pub fn stabilization_radius(
    sample: &FieldSample,
    x: usize,
    delta: f64,
    exps: &ExponentSet,
) -> Result<StabilizationReport> {
    let radii = dyadic_radii(sample.grid.h, sample.grid.side());
    stabilization_over(sample, x, delta, exps, &radii)
}

pub fn stabilization_over(
    sample: &FieldSample,
    x: usize,
    delta: f64,
    exps: &ExponentSet,
    radii: &[f64],
) -> Result<StabilizationReport> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("δ must be positive (got {delta})")));
    }
    if radii.len() < 2 {
        return Err(Error::InvalidArgument("need at least two radii".into()));
    }
    let reports = radii
        .iter()
        .map(|&r| constants(sample, &Ball::new(&sample.grid, x, r)?, exps, None))
        .collect::<Result<Vec<_>>>()?;
    let vals: Vec<[f64; 3]> = reports.iter().map(tracked).collect();
    let last = vals[vals.len() - 1];
    let prev = vals[vals.len() - 2];
    let last_change = (0..3)
        .map(|k| (last[k] / prev[k] - 1.0).abs())
        .fold(0.0, f64::max);
    let within = |v: &[f64; 3]| (0..3).all(|k| v[k] <= (1.0 + delta) * last[k] && last[k] <= (1.0 + delta) * v[k]);
    let flagged = last_change > delta;
    let radius = if flagged {
        0.5 * sample.grid.side()
    } else {
        // smallest radius from which every larger radius stays within the band
        let mut k = vals.len() - 1;
        while k > 0 && within(&vals[k - 1]) {
            k -= 1;
        }
        radii[k]
    };
    Ok(StabilizationReport {
        center: x,
        delta,
        radii: radii.to_vec(),
        reports,
        radius,
        flagged,
        last_change,
    })
}
