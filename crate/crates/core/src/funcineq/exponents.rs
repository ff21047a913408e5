use serde::{Deserialize, Serialize};

use crate::serde_ext::ext_f64;
use crate::{Error, Result};

/// Exponents attached to a moment pair `(p, q)` in dimension `d`.
///
/// Infinite `p`, `q` or `ρ` are stored as `f64::INFINITY`; every formula is
/// evaluated through reciprocals so that no `∞/∞` ever occurs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    #[serde(with = "ext_f64")]
    pub p: f64,
    #[serde(with = "ext_f64")]
    pub q: f64,
    pub d: usize,
    /// `p* = p/(p−1)`.
    pub p_star: f64,
    /// `ρ = 2qd/(q(d−2)+d)`.
    #[serde(with = "ext_f64")]
    pub rho: f64,
    /// `ν = 2 − 2p*/ρ`.
    pub nu: f64,
    /// `μ = (2/d − 1/q)^{-1}`.
    pub mu: f64,
    /// `γ = ((p−1)/p)(2/d − 1/p − 1/q)^{-1}`.
    pub gamma: f64,
}

fn recip(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        1.0 / x
    }
}

impl ExponentSet {
    pub fn inv_p(&self) -> f64 {
        recip(self.p)
    }

    pub fn inv_q(&self) -> f64 {
        recip(self.q)
    }

    /// `1/ρ = (d−2)/(2d) + 1/(2q)`.
    pub fn inv_rho(&self) -> f64 {
        inv_rho(self.d, self.inv_q())
    }

    /// `2p*/ρ`, the power of `‖Λ‖_{p,B}` in the weighted Sobolev constant.
    pub fn weight_power(&self) -> f64 {
        2.0 * self.p_star * self.inv_rho()
    }

    /// `ρ/p*`, the exponent of the weighted Sobolev norm (∞ when `ρ = ∞`).
    pub fn weighted_rho(&self) -> f64 {
        let inv = self.inv_rho() * self.p_star;
        if inv == 0.0 {
            f64::INFINITY
        } else {
            1.0 / inv
        }
    }

    /// Moser gap exponent `2ν/(2ν−2)` (equivalently `ν/(ν−1)`).
    pub fn gap_exponent(&self) -> f64 {
        self.nu / (self.nu - 1.0)
    }
}

fn inv_rho(d: usize, inv_q: f64) -> f64 {
    (d as f64 - 2.0) / (2.0 * d as f64) + 0.5 * inv_q
}

/// Relative slack below which `1/p + 1/q` counts as lying on `2/d`.
const BOUNDARY_TOLERANCE: f64 = 1e-12;

fn condition_slack(ip: f64, iq: f64, d: usize) -> f64 {
    2.0 / d as f64 - ip - iq
}

/// Whether `1/p + 1/q < 2/d`, with pairs within rounding of the boundary
/// counted as on it.
pub fn admissible(p: f64, q: f64, d: usize) -> bool {
    condition_slack(recip(p), recip(q), d) > BOUNDARY_TOLERANCE * 2.0 / d as f64
}

pub fn exponents(p: f64, q: f64, d: usize) -> Result<ExponentSet> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("dimension must be ≥ 2 (got {d})")));
    }
    if !(p >= 1.0) || !(q >= 1.0) {
        return Err(Error::InvalidArgument(format!("need p, q ≥ 1 (got {p}, {q})")));
    }
    let (ip, iq) = (recip(p), recip(q));
    let slack = condition_slack(ip, iq, d);
    if !admissible(p, q, d) {
        return Err(Error::Condition(format!(
            "moment condition 1/p + 1/q < 2/d fails: 1/{p} + 1/{q} = {} ≥ {}",
            ip + iq,
            2.0 / d as f64
        )));
    }
    let p_star = 1.0 / (1.0 - ip);
    let ir = inv_rho(d, iq);
    let rho = recip(ir);
    let nu = 2.0 - 2.0 * p_star * ir;
    let mu = 1.0 / (2.0 / d as f64 - iq);
    let gamma = (1.0 - ip) / slack;
    Ok(ExponentSet {
        p,
        q,
        d,
        p_star,
        rho,
        nu,
        mu,
        gamma,
    })
}
