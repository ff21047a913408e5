use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibration::Calibration;
use super::constants::{constants, ConstantReport};
use super::exponents::ExponentSet;
use super::testfn::{smoothed_noise, trial_seed, Support};
use crate::env::FieldSample;
use crate::form::{assemble_form, ball_norm, gradient_sup, radial_cutoff, Ball, FormMatrix};
use crate::sparse::{smallest_eigenpair, CsrMatrix};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    Sobolev,
    WeightedSobolev,
    SobolevCutoff,
    WeightedSobolevCutoff,
    Nash,
    WeightedNash,
    Poincare,
    WeightedPoincare,
    PoincareCutoff,
    WeightedPoincareCutoff,
}

impl Inequality {
    pub const ALL: [Inequality; 10] = [
        Inequality::Sobolev,
        Inequality::WeightedSobolev,
        Inequality::SobolevCutoff,
        Inequality::WeightedSobolevCutoff,
        Inequality::Nash,
        Inequality::WeightedNash,
        Inequality::Poincare,
        Inequality::WeightedPoincare,
        Inequality::PoincareCutoff,
        Inequality::WeightedPoincareCutoff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Inequality::Sobolev => "sobolev",
            Inequality::WeightedSobolev => "weighted_sobolev",
            Inequality::SobolevCutoff => "sobolev_cutoff",
            Inequality::WeightedSobolevCutoff => "weighted_sobolev_cutoff",
            Inequality::Nash => "nash",
            Inequality::WeightedNash => "weighted_nash",
            Inequality::Poincare => "poincare",
            Inequality::WeightedPoincare => "weighted_poincare",
            Inequality::PoincareCutoff => "poincare_cutoff",
            Inequality::WeightedPoincareCutoff => "weighted_poincare_cutoff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.name() == s)
    }

    /// Test functions must vanish outside the ball.
    pub fn zero_boundary(self) -> bool {
        matches!(
            self,
            Inequality::Sobolev | Inequality::WeightedSobolev | Inequality::Nash | Inequality::WeightedNash
        )
    }

    pub fn is_poincare(self) -> bool {
        matches!(
            self,
            Inequality::Poincare
                | Inequality::WeightedPoincare
                | Inequality::PoincareCutoff
                | Inequality::WeightedPoincareCutoff
        )
    }

    /// Product of ball constants multiplying the constant-free right-hand side.
    pub fn constant(self, c: &ConstantReport) -> f64 {
        match self {
            Inequality::Sobolev | Inequality::SobolevCutoff | Inequality::Nash => c.c_s,
            Inequality::WeightedSobolev | Inequality::WeightedSobolevCutoff | Inequality::WeightedNash => {
                c.c_s_weighted
            }
            Inequality::Poincare => c.c_p,
            Inequality::WeightedPoincare => c.c_p_weighted,
            Inequality::PoincareCutoff => c.m * c.c_p,
            Inequality::WeightedPoincareCutoff => c.m_weighted * c.c_p_weighted,
        }
    }
}

impl std::fmt::Display for Inequality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of one inequality audit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditReport {
    pub inequality: Inequality,
    pub seed: u64,
    pub center: usize,
    pub radius: f64,
    pub exponents: ExponentSet,
    pub constants: ConstantReport,
    pub trials: usize,
    pub skipped: usize,
    /// Largest `LHS / (constant-free RHS)` over the trials.
    pub empirical_best: f64,
    /// Ball constant product multiplying the right-hand side.
    pub bound_factor: f64,
    /// Calibrated dimensional factor `c(d)`.
    pub calibration_factor: Option<f64>,
    pub calibration_version: String,
    /// `empirical_best ≤ c(d) · bound_factor`; `None` without calibration.
    pub pass: Option<bool>,
    /// Exact best constant from the generalized eigenproblem (Poincaré variants).
    pub eigen_best: Option<f64>,
    /// The eigen best constant dominates every trial ratio.
    pub eigen_consistent: Option<bool>,
}

/// Everything an inequality audit needs on one ball.
pub struct InequalityAuditor<'a> {
    pub sample: &'a FieldSample,
    pub form: FormMatrix,
    pub ball: Ball,
    pub exps: ExponentSet,
    pub constants: ConstantReport,
    pub eta: Vec<f64>,
    pub grad_eta: f64,
    pub width: f64,
    ball_volume: f64,
    /// Faces with at least one end within distance `r + h` of the center.
    faces: Vec<(usize, usize, f64)>,
    inside: Vec<bool>,
}

impl<'a> InequalityAuditor<'a> {
    pub fn new(sample: &'a FieldSample, ball: Ball, exps: ExponentSet) -> Result<Self> {
        let form = assemble_form(sample, &sample.grid)?;
        Self::with_form(sample, form, ball, exps)
    }

    pub fn with_form(sample: &'a FieldSample, form: FormMatrix, ball: Ball, exps: ExponentSet) -> Result<Self> {
        let grid = &sample.grid;
        let constants = constants(sample, &ball, &exps, None)?;
        let eta = radial_cutoff(grid, ball.center, ball.radius);
        let grad_eta = gradient_sup(grid, &eta);
        let near = grid.ball_sites(ball.center, ball.radius + grid.h);
        let mut near_mask = vec![false; grid.num_sites()];
        for &s in &near {
            near_mask[s] = true;
        }
        let mut faces = Vec::new();
        for &i in &near {
            for axis in 0..grid.d {
                let j = grid.neighbor(i, axis, true);
                faces.push((i, j, form.conductance[i * grid.d + axis]));
                let k = grid.neighbor(i, axis, false);
                if !near_mask[k] {
                    faces.push((k, i, form.conductance[k * grid.d + axis]));
                }
            }
        }
        Ok(Self {
            inside: ball.mask(grid.num_sites()),
            ball_volume: ball.volume(grid.d),
            width: 3.0 * grid.h,
            sample,
            form,
            ball,
            exps,
            constants,
            eta,
            grad_eta,
            faces,
        })
    }

    fn d(&self) -> f64 {
        self.sample.grid.d as f64
    }

    fn energy(&self, u: &[f64]) -> f64 {
        self.faces.iter().map(|&(i, j, c)| c * (u[i] - u[j]).powi(2)).sum()
    }

    fn energy_inside(&self, u: &[f64]) -> f64 {
        self.faces
            .iter()
            .filter(|&&(i, j, _)| self.inside[i] && self.inside[j])
            .map(|&(i, j, c)| c * (u[i] - u[j]).powi(2))
            .sum()
    }

    fn energy_cutoff(&self, u: &[f64]) -> f64 {
        let e = &self.eta;
        self.faces
            .iter()
            .map(|&(i, j, c)| 0.5 * (e[i] * e[i] + e[j] * e[j]) * c * (u[i] - u[j]).powi(2))
            .sum()
    }

    fn centered(&self, u: &[f64], theta: &dyn Fn(usize) -> f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.sample.grid.num_sites();
        let (mut num, mut den) = (0.0, 0.0);
        for &s in &self.ball.sites {
            num += u[s] * theta(s);
            den += theta(s);
        }
        let mean = num / den;
        let mut v = vec![0.0; n];
        let mut w = vec![0.0; n];
        for &s in &self.ball.sites {
            v[s] = u[s] - mean;
            w[s] = theta(s);
        }
        (v, w)
    }

    /// `(LHS, constant-free RHS)` for one test function (torus array).
    pub fn sides(&self, which: Inequality, u: &[f64]) -> Result<(f64, f64)> {
        let b = &self.ball;
        let d = self.d();
        let vol = self.ball_volume;
        let lam = &self.sample.upper;
        let e = &self.exps;
        let eta_u = || -> Vec<f64> { u.iter().zip(&self.eta).map(|(a, b)| a * b).collect() };
        let cutoff_rhs = || -> Result<f64> {
            Ok(vol.powf(2.0 / d)
                * (self.energy_cutoff(u) / vol
                    + self.grad_eta.powi(2) * ball_norm(u, b, 2.0, Some(lam))?.powi(2)))
        };
        let scale = vol.powf((2.0 - d) / d);
        Ok(match which {
            Inequality::Sobolev => (
                ball_norm(u, b, e.rho, None)?.powi(2),
                vol.powf(2.0 / d) * self.energy(u) / vol,
            ),
            Inequality::WeightedSobolev => (
                ball_norm(u, b, e.weighted_rho(), Some(lam))?.powi(2),
                vol.powf(2.0 / d) * self.energy(u) / vol,
            ),
            Inequality::SobolevCutoff => (ball_norm(&eta_u(), b, e.rho, None)?.powi(2), cutoff_rhs()?),
            Inequality::WeightedSobolevCutoff => (
                ball_norm(&eta_u(), b, e.weighted_rho(), Some(lam))?.powi(2),
                cutoff_rhs()?,
            ),
            Inequality::Nash => (
                ball_norm(u, b, 2.0, None)?.powf(2.0 + 2.0 / e.mu),
                scale * self.energy(u) * ball_norm(u, b, 1.0, None)?.powf(2.0 / e.mu),
            ),
            Inequality::WeightedNash => (
                ball_norm(u, b, 2.0, Some(lam))?.powf(2.0 + 2.0 / e.gamma),
                scale * self.energy(u) * ball_norm(u, b, 1.0, Some(lam))?.powf(2.0 / e.gamma),
            ),
            Inequality::Poincare => {
                let (v, _) = self.centered(u, &|_| 1.0);
                (ball_norm(&v, b, 2.0, None)?.powi(2), scale * self.energy_inside(u))
            }
            Inequality::WeightedPoincare => {
                let (v, w) = self.centered(u, &|s| lam[s]);
                (ball_norm(&v, b, 2.0, Some(&w))?.powi(2), scale * self.energy_inside(u))
            }
            Inequality::PoincareCutoff => {
                let (v, w) = self.centered(u, &|s| self.eta[s].powi(2));
                (ball_norm(&v, b, 2.0, Some(&w))?.powi(2), scale * self.energy_cutoff(u))
            }
            Inequality::WeightedPoincareCutoff => {
                let (v, w) = self.centered(u, &|s| lam[s] * self.eta[s].powi(2));
                (ball_norm(&v, b, 2.0, Some(&w))?.powi(2), scale * self.energy_cutoff(u))
            }
        })
    }

    /// Test function of trial `k`.
    pub fn trial_function(&self, which: Inequality, seed: u64, k: usize) -> Vec<f64> {
        let support = if which.zero_boundary() {
            Support::Compact
        } else {
            Support::Local
        };
        smoothed_noise(&self.sample.grid, &self.ball, support, self.width, trial_seed(seed, k))
    }

    /// Per-trial ratios; `None` marks skipped trials (zero right-hand side).
    pub fn ratios(&self, which: Inequality, trials: usize, seed: u64) -> Result<Vec<Option<f64>>> {
        (0..trials)
            .into_par_iter()
            .map(|k| {
                let u = self.trial_function(which, seed, k);
                let (lhs, rhs) = self.sides(which, &u)?;
                Ok(if rhs > 0.0 && rhs.is_finite() { Some(lhs / rhs) } else { None })
            })
            .collect()
    }

    /// Exact best constant `sup LHS / RHS` of a Poincaré variant from the
    /// smallest nonzero generalized eigenvalue.
    pub fn eigen_best(&self, which: Inequality) -> Result<f64> {
        if !which.is_poincare() {
            return Err(Error::InvalidArgument(format!("{which} has no eigen formulation")));
        }
        let lam = &self.sample.upper;
        let d = self.d();
        let (faces, weight): (Vec<(usize, usize, f64)>, Box<dyn Fn(usize) -> f64>) = match which {
            Inequality::Poincare | Inequality::WeightedPoincare => (
                self.faces
                    .iter()
                    .copied()
                    .filter(|&(i, j, _)| self.inside[i] && self.inside[j])
                    .collect(),
                if which == Inequality::Poincare {
                    Box::new(|_| 1.0)
                } else {
                    Box::new(|s| lam[s])
                },
            ),
            _ => {
                let e = &self.eta;
                (
                    self.faces
                        .iter()
                        .map(|&(i, j, c)| (i, j, 0.5 * (e[i] * e[i] + e[j] * e[j]) * c))
                        .filter(|f| f.2 > 0.0)
                        .collect(),
                    if which == Inequality::PoincareCutoff {
                        Box::new(move |s| e[s] * e[s])
                    } else {
                        Box::new(move |s| lam[s] * e[s] * e[s])
                    },
                )
            }
        };
        let theta = |s: usize| if self.inside[s] { weight(s) } else { 0.0 };
        let (stiffness, mass) = reduced_pencil(&faces, &theta, self.sample.grid.num_sites());
        let (mu, _) = smallest_eigenpair(&stiffness, &mass, true, 1e-10, 20_000)?;
        Ok(1.0 / (self.ball.sites.len() as f64 * self.ball_volume.powf((2.0 - d) / d) * mu))
    }

    pub fn audit(
        &self,
        which: Inequality,
        trials: usize,
        seed: u64,
        calibration: &Calibration,
    ) -> Result<AuditReport> {
        if trials == 0 {
            return Err(Error::InvalidArgument("need at least one trial".into()));
        }
        let ratios = self.ratios(which, trials, seed)?;
        let skipped = ratios.iter().filter(|r| r.is_none()).count();
        let empirical_best = ratios.iter().flatten().copied().fold(0.0, f64::max);
        let bound_factor = which.constant(&self.constants);
        let calibration_factor = calibration.factor(self.sample.grid.d, which);
        let pass = calibration_factor.map(|c| empirical_best <= c * bound_factor);
        let eigen_best = if which.is_poincare() {
            Some(self.eigen_best(which)?)
        } else {
            None
        };
        let eigen_consistent = eigen_best.map(|e| e >= empirical_best * (1.0 - 1e-8));
        Ok(AuditReport {
            inequality: which,
            seed,
            center: self.ball.center,
            radius: self.ball.radius,
            exponents: self.exps.clone(),
            constants: self.constants.clone(),
            trials,
            skipped,
            empirical_best,
            bound_factor,
            calibration_factor,
            calibration_version: calibration.version.clone(),
            pass,
            eigen_best,
            eigen_consistent,
        })
    }
}

/// Builds `(K, m)` on the sites with positive weight, eliminating the
/// zero-weight endpoints by a Schur complement (they only touch weighted
/// sites, so their block is diagonal).
fn reduced_pencil(
    faces: &[(usize, usize, f64)],
    theta: &dyn Fn(usize) -> f64,
    num_sites: usize,
) -> (CsrMatrix, Vec<f64>) {
    let mut local = vec![usize::MAX; num_sites];
    let mut mass = Vec::new();
    let mut passive: std::collections::BTreeMap<usize, Vec<(usize, f64)>> = Default::default();
    for &(i, j, _) in faces {
        for s in [i, j] {
            if local[s] == usize::MAX && theta(s) > 0.0 {
                local[s] = mass.len();
                mass.push(theta(s));
            }
        }
    }
    let mut t = Vec::new();
    for &(i, j, c) in faces {
        match (local[i] != usize::MAX, local[j] != usize::MAX) {
            (true, true) => {
                let (a, b) = (local[i], local[j]);
                t.extend([(a, a, c), (b, b, c), (a, b, -c), (b, a, -c)]);
            }
            (true, false) => {
                t.push((local[i], local[i], c));
                passive.entry(j).or_default().push((local[i], c));
            }
            (false, true) => {
                t.push((local[j], local[j], c));
                passive.entry(i).or_default().push((local[j], c));
            }
            (false, false) => {}
        }
    }
    for links in passive.values() {
        let total: f64 = links.iter().map(|l| l.1).sum();
        for &(a, wa) in links {
            for &(b, wb) in links {
                t.push((a, b, -wa * wb / total));
            }
        }
    }
    (CsrMatrix::from_triplets(mass.len(), t), mass)
}

/// One-call audit with a freshly assembled form and the bundled calibration.
pub fn audit_inequality(
    which: Inequality,
    sample: &FieldSample,
    ball: &Ball,
    exps: &ExponentSet,
    trials: usize,
    seed: u64,
) -> Result<AuditReport> {
    let auditor = InequalityAuditor::new(sample, ball.clone(), exps.clone())?;
    auditor.audit(which, trials, seed, Calibration::bundled())
}
