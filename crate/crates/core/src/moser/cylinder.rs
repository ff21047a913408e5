//! Space-time cylinders `(t₀, t₁) × B(x, ρ)` and the Moser ladders.
//!
//! Membership is closed in time and in the torus metric; a cylinder is
//! evaluated on the stored time samples of a solution.

use serde::{Deserialize, Serialize};

use crate::grid::TorusGrid;
use crate::{Error, Result};

/// Slack used when matching sample times against cylinder endpoints.
const TIME_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CylinderKind {
    /// `(s − τr², s) × B(x, r)`.
    Q,
    /// `(s − δτr², s) × B(x, δr)`.
    QSigma,
    /// `(s − τr², s − (1 − δ)τr²) × B(x, δr)`.
    QPrime,
    /// `(s − (3 + δ)τr²/4, s − (3 − δ)τr²/4) × B(x, δr)`.
    QMinus,
    /// `(s − (1 + δ)τr²/4, s) × B(x, δr)`.
    QPlus,
    /// `(s − κτr², s) × B(x, δr)`.
    KPlus,
    /// `(s − τr², s − κτr²) × B(x, δr)`.
    KMinus,
}

impl CylinderKind {
    pub const ALL: [CylinderKind; 7] = [
        CylinderKind::Q,
        CylinderKind::QSigma,
        CylinderKind::QPrime,
        CylinderKind::QMinus,
        CylinderKind::QPlus,
        CylinderKind::KPlus,
        CylinderKind::KMinus,
    ];

    /// Time window and ball radius for top `s`, radius `r`, shape `τ`,
    /// fraction `δ` and split `κ`.
    pub fn resolve(self, s: f64, r: f64, tau: f64, delta: f64, kappa: f64) -> (f64, f64, f64) {
        let l = tau * r * r;
        match self {
            CylinderKind::Q => (s - l, s, r),
            CylinderKind::QSigma => (s - delta * l, s, delta * r),
            CylinderKind::QPrime => (s - l, s - (1.0 - delta) * l, delta * r),
            CylinderKind::QMinus => (s - (3.0 + delta) * l / 4.0, s - (3.0 - delta) * l / 4.0, delta * r),
            CylinderKind::QPlus => (s - (1.0 + delta) * l / 4.0, s, delta * r),
            CylinderKind::KPlus => (s - kappa * l, s, delta * r),
            CylinderKind::KMinus => (s - l, s - kappa * l, delta * r),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub kind: CylinderKind,
    pub center: usize,
    /// Top time `s`.
    pub top: f64,
    pub radius: f64,
    pub tau: f64,
    pub delta: f64,
    pub kappa: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub ball_radius: f64,
    /// Grid sites of the ball, ascending.
    pub sites: Vec<usize>,
}

impl ParabolicCylinder {
    /// One cylinder; `fraction` plays the role of `δ` (or `σ` for `Q_σ`, `Q'_σ`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &TorusGrid,
        kind: CylinderKind,
        center: usize,
        top: f64,
        radius: f64,
        tau: f64,
        fraction: f64,
        kappa: f64,
    ) -> Result<Self> {
        if center >= grid.num_sites() {
            return Err(Error::InvalidArgument(format!("center {center} outside the torus")));
        }
        if !(radius > 0.0) || !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cylinder needs r > 0 and τ > 0 (got r = {radius}, τ = {tau})"
            )));
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("fraction must lie in (0, 1] (got {fraction})")));
        }
        let (t_start, t_end, ball_radius) = kind.resolve(top, radius, tau, fraction, kappa);
        if t_start < -TIME_SLACK * tau * radius * radius {
            return Err(Error::InvalidArgument(format!(
                "cylinder bottom {t_start} is before time 0"
            )));
        }
        let mut sites = grid.ball_sites(center, ball_radius);
        sites.sort_unstable();
        Ok(Self {
            kind,
            center,
            top,
            radius,
            tau,
            delta: fraction,
            kappa,
            t_start,
            t_end,
            ball_radius,
            sites,
        })
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Whether time `t` lies in the closed window.
    pub fn contains_time(&self, t: f64) -> bool {
        let slack = TIME_SLACK * self.tau * self.radius * self.radius;
        t >= self.t_start - slack && t <= self.t_end + slack
    }

    /// Indices of `times` inside the closed window.
    pub fn time_indices(&self, times: &[f64]) -> Vec<usize> {
        (0..times.len()).filter(|&k| self.contains_time(times[k])).collect()
    }

    /// Whether the ball of `self` lies inside the ball of `other` and the
    /// window inside its window.
    pub fn is_subset_of(&self, other: &ParabolicCylinder) -> bool {
        let slack = TIME_SLACK * other.tau * other.radius * other.radius;
        let inner = self.t_start >= other.t_start - slack && self.t_end <= other.t_end + slack;
        inner && self.sites.iter().all(|s| other.sites.binary_search(s).is_ok())
    }
}

/// The seven cylinders attached to one `(x, s, r, τ, δ, κ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CylinderSet {
    pub center: usize,
    pub top: f64,
    pub radius: f64,
    pub tau: f64,
    pub delta: f64,
    pub kappa: f64,
    pub cylinders: Vec<ParabolicCylinder>,
}

impl CylinderSet {
    pub fn get(&self, kind: CylinderKind) -> &ParabolicCylinder {
        self.cylinders
            .iter()
            .find(|c| c.kind == kind)
            .expect("every kind is resolved")
    }
}

/// Resolves all seven cylinders.
pub fn cylinders(
    grid: &TorusGrid,
    x: usize,
    s: f64,
    r: f64,
    tau: f64,
    delta: f64,
    kappa: f64,
) -> Result<CylinderSet> {
    let mut problems = Vec::new();
    if r < 4.0 * grid.h * (1.0 - 1e-12) {
        problems.push(format!("r = {r} is below 4h = {}", 4.0 * grid.h));
    }
    if !(tau > 0.0) {
        problems.push(format!("τ must be positive (got {tau})"));
    }
    if !(0.5..1.0).contains(&delta) {
        problems.push(format!("δ must lie in [1/2, 1) (got {delta})"));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        problems.push(format!("κ must lie in (0, 1) (got {kappa})"));
    }
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(problems.join("; ")));
    }
    let cylinders = CylinderKind::ALL
        .iter()
        .map(|&kind| {
            let fraction = if kind == CylinderKind::Q { 1.0 } else { delta };
            ParabolicCylinder::new(grid, kind, x, s, r, tau, fraction, kappa)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CylinderSet {
        center: x,
        top: s,
        radius: r,
        tau,
        delta,
        kappa,
        cylinders,
    })
}

/// Nested fractions, exponent ladder and cutoff budgets of one Moser iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoserSchedule {
    pub sigma: f64,
    pub sigma_prime: f64,
    /// `σ_k = σ' + 2^{−k}(σ − σ')`.
    pub fractions: Vec<f64>,
    pub exponents: Vec<f64>,
    /// `‖∇η_k‖_∞ ≤ 2/(r δ_k)`.
    pub space_budgets: Vec<f64>,
    /// `‖ζ'_k‖_∞ ≤ 2/(r² τ δ_k)`.
    pub time_budgets: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ladder {
    /// `α_k = ν^k`.
    Subcaloric,
    /// `β_k = ν^k α`.
    Supercaloric { alpha: f64 },
    /// `α_i = α₀ ν^{−i}`.
    CloseToZero { alpha0: f64 },
}

impl MoserSchedule {
    pub fn new(
        sigma: f64,
        sigma_prime: f64,
        nu: f64,
        ladder: Ladder,
        r: f64,
        tau: f64,
        levels: usize,
    ) -> Result<Self> {
        if !(0.5 <= sigma_prime && sigma_prime < sigma && sigma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 1/2 ≤ σ' < σ ≤ 1 (got σ = {sigma}, σ' = {sigma_prime})"
            )));
        }
        if !(nu > 1.0) {
            return Err(Error::InvalidArgument(format!("ν must exceed 1 (got {nu})")));
        }
        let gap = sigma - sigma_prime;
        let fractions: Vec<f64> = (0..=levels)
            .map(|k| sigma_prime + gap * 0.5f64.powi(k as i32))
            .collect();
        let exponents = (0..=levels)
            .map(|k| match ladder {
                Ladder::Subcaloric => nu.powi(k as i32),
                Ladder::Supercaloric { alpha } => nu.powi(k as i32) * alpha,
                Ladder::CloseToZero { alpha0 } => alpha0 * nu.powi(-(k as i32)),
            })
            .collect();
        let widths: Vec<f64> = (0..levels).map(|k| gap * 0.5f64.powi(k as i32 + 1)).collect();
        Ok(Self {
            sigma,
            sigma_prime,
            fractions,
            exponents,
            space_budgets: widths.iter().map(|w| 2.0 / (r * w)).collect(),
            time_budgets: widths.iter().map(|w| 2.0 / (r * r * tau * w)).collect(),
        })
    }

    /// `δ_k = σ_k − σ_{k+1}`.
    pub fn widths(&self) -> Vec<f64> {
        self.fractions.windows(2).map(|w| w[0] - w[1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TorusGrid {
        TorusGrid::new(2, 32, 0.25).unwrap()
    }

    #[test]
    fn harnack_windows_by_substitution() {
        let g = grid();
        let set = cylinders(&g, g.center_site(), 1.0, 1.0, 1.0, 0.5, 0.5).unwrap();
        let m = set.get(CylinderKind::QMinus);
        assert!((m.t_start - 1.0 / 8.0).abs() < 1e-15 && (m.t_end - 3.0 / 8.0).abs() < 1e-15);
        assert_eq!(m.ball_radius, 0.5);
        let p = set.get(CylinderKind::QPlus);
        assert!((p.t_start - 5.0 / 8.0).abs() < 1e-15 && p.t_end == 1.0);
    }

    #[test]
    fn plus_and_minus_are_disjoint_and_inside_q() {
        let g = grid();
        for &delta in &[0.5, 0.6, 0.75, 0.9, 0.99] {
            for &tau in &[0.25, 1.0, 3.0] {
                let set = cylinders(&g, 7, 10.0, 1.0, tau, delta, 0.5).unwrap();
                let (m, p, q) = (
                    set.get(CylinderKind::QMinus),
                    set.get(CylinderKind::QPlus),
                    set.get(CylinderKind::Q),
                );
                assert!(m.t_end < p.t_start);
                assert!(m.is_subset_of(q) && p.is_subset_of(q));
            }
        }
    }

    #[test]
    fn k_plus_and_k_minus_tile_the_delta_cylinder() {
        let g = grid();
        let set = cylinders(&g, 0, 4.0, 1.0, 2.0, 0.5, 0.5).unwrap();
        let (kp, km) = (set.get(CylinderKind::KPlus), set.get(CylinderKind::KMinus));
        assert_eq!(km.t_start, 2.0);
        assert_eq!(km.t_end, kp.t_start);
        assert_eq!(kp.t_end, 4.0);
        assert_eq!(kp.sites, km.sites);
    }

    #[test]
    fn bottom_before_zero_is_rejected() {
        let g = grid();
        assert!(cylinders(&g, 0, 0.5, 1.0, 1.0, 0.5, 0.5).is_err());
        assert!(cylinders(&g, 0, 1.0, 0.5, 1.0, 0.5, 0.5).is_err());
        assert!(cylinders(&g, 0, 1.0, 1.0, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn schedule_fractions_shrink_to_sigma_prime() {
        let s = MoserSchedule::new(1.0, 0.5, 2.0, Ladder::Subcaloric, 4.0, 1.0, 6).unwrap();
        assert!(s.fractions.windows(2).all(|w| w[1] < w[0]));
        for (k, w) in s.widths().iter().enumerate() {
            assert!((w - 0.5f64.powi(k as i32 + 2)).abs() < 1e-15);
        }
        assert_eq!(s.exponents[3], 8.0);
        let z = MoserSchedule::new(1.0, 0.5, 1.5, Ladder::CloseToZero { alpha0: 1.2 }, 4.0, 1.0, 3).unwrap();
        assert!((z.exponents[2] - 1.2 / 2.25).abs() < 1e-15);
    }
}
