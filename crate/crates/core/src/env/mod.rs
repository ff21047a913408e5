//! Synthetic coefficient fields `(a, λ, Λ)` on a periodic cell lattice.
//!
//! Every field is piecewise constant on the `N^d` cells of side `h`. Cell `i`
//! carries a symmetric positive-definite matrix `a_i` with
//! `λ_i |ξ|² ≤ ξ·a_i ξ ≤ Λ_i |ξ|²`; `Λ` doubles as the speed measure.

mod field;
mod io;

pub use field::gaussian_field;
pub use io::{encode_sample, read_sample, write_sample, MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::grid::TorusGrid;
use crate::serde_ext::ext_f64;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Model {
    /// `a = I`, `λ = Λ = 1`.
    Constant,
    /// Independent Pareto tails for `λ^{-1}` and `Λ` in every cell.
    IidCellPareto,
    /// `λ = exp(σ G)` with `G` a unit-variance Gaussian field with exponential
    /// covariance `exp(-|x|/ℓ)`; `Λ = κ_a λ`.
    Lognormal { sigma: f64, correlation_length: f64 },
    /// Dyadic annuli around the torus center with `λ_k = 2^{-βk}`, `Λ_k = 2^{βk}`.
    TrapCounterexample { beta: f64 },
    /// `a = κ(x_1) I`, `λ = Λ = κ`, with `log κ` i.i.d. normal per layer.
    Layered { sigma: f64 },
}

impl Model {
    pub fn id(&self) -> u32 {
        match self {
            Model::Constant => 0,
            Model::IidCellPareto => 1,
            Model::Lognormal { .. } => 2,
            Model::TrapCounterexample { .. } => 3,
            Model::Layered { .. } => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::Constant => "constant",
            Model::IidCellPareto => "iid-cell-pareto",
            Model::Lognormal { .. } => "lognormal",
            Model::TrapCounterexample { .. } => "trap-counterexample",
            Model::Layered { .. } => "layered",
        }
    }

    /// Whether the model is expected to satisfy the moment condition.
    pub fn is_failure_regime(&self) -> bool {
        matches!(self, Model::TrapCounterexample { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub dimension: usize,
    pub cells_per_side: usize,
    pub cell_size: f64,
    pub model: Model,
    /// Pareto tail index of `λ^{-1}`.
    pub tail_lambda_inv: f64,
    /// Pareto tail index of `Λ`.
    pub tail_lambda: f64,
    /// Upper bound on the per-cell eigenvalue spread of `a`.
    pub anisotropy: f64,
    pub seed: u64,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            dimension: 2,
            cells_per_side: 64,
            cell_size: 1.0,
            model: Model::Constant,
            tail_lambda_inv: 6.0,
            tail_lambda: 6.0,
            anisotropy: 2.0,
            seed: 1,
        }
    }
}

impl EnvironmentSpec {
    pub fn new(dimension: usize, cells_per_side: usize, model: Model, seed: u64) -> Self {
        Self {
            dimension,
            cells_per_side,
            model,
            seed,
            ..Self::default()
        }
    }

    pub fn with_cell_size(mut self, h: f64) -> Self {
        self.cell_size = h;
        self
    }

    pub fn with_tails(mut self, tail_lambda_inv: f64, tail_lambda: f64) -> Self {
        self.tail_lambda_inv = tail_lambda_inv;
        self.tail_lambda = tail_lambda;
        self
    }

    pub fn with_anisotropy(mut self, anisotropy: f64) -> Self {
        self.anisotropy = anisotropy;
        self
    }

    /// Every violated invariant, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dimension < 2 {
            out.push(format!("dimension must be ≥ 2 (got {})", self.dimension));
        }
        if self.cells_per_side < 4 || !self.cells_per_side.is_power_of_two() {
            out.push(format!(
                "cells_per_side must be a power of two ≥ 4 (got {})",
                self.cells_per_side
            ));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            out.push(format!("cell_size must be positive (got {})", self.cell_size));
        }
        if !(self.tail_lambda_inv > 0.0) || !(self.tail_lambda > 0.0) {
            out.push("tail indices must be positive".into());
        }
        if !(self.anisotropy >= 1.0) || !self.anisotropy.is_finite() {
            out.push(format!("anisotropy must be ≥ 1 (got {})", self.anisotropy));
        }
        match self.model {
            Model::Lognormal {
                sigma,
                correlation_length,
            } => {
                if !(sigma >= 0.0) || !(correlation_length > 0.0) {
                    out.push("lognormal needs sigma ≥ 0 and correlation_length > 0".into());
                }
            }
            Model::TrapCounterexample { beta } if !(beta > 0.0) => {
                out.push("trap beta must be positive".into());
            }
            Model::Layered { sigma } if !(sigma >= 0.0) => {
                out.push("layered sigma must be ≥ 0".into());
            }
            _ => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(p.join("; ")))
        }
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dimension, self.cells_per_side, self.cell_size)
    }
}

/// One realization of the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub spec: EnvironmentSpec,
    pub grid: TorusGrid,
    /// Per-cell lower ellipticity bound `λ`.
    pub lower: Vec<f64>,
    /// Per-cell upper bound `Λ`, also the speed measure density.
    pub upper: Vec<f64>,
    /// Per-cell `a`, `d×d` row-major.
    pub conductivity: Vec<f64>,
}

impl FieldSample {
    pub fn from_parts(
        spec: EnvironmentSpec,
        lower: Vec<f64>,
        upper: Vec<f64>,
        conductivity: Vec<f64>,
    ) -> Result<Self> {
        let grid = spec.grid()?;
        let n = grid.num_sites();
        let d = grid.d;
        if lower.len() != n || upper.len() != n || conductivity.len() != n * d * d {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} cells with {d}×{d} matrices"
            )));
        }
        let s = Self {
            spec,
            grid,
            lower,
            upper,
            conductivity,
        };
        s.check_invariants()?;
        Ok(s)
    }

    pub fn num_cells(&self) -> usize {
        self.lower.len()
    }

    pub fn dimension(&self) -> usize {
        self.grid.d
    }

    /// `a` of one cell, `d×d` row-major.
    pub fn a(&self, cell: usize) -> &[f64] {
        let dd = self.grid.d * self.grid.d;
        &self.conductivity[cell * dd..(cell + 1) * dd]
    }

    /// Checks `λ|ξ|² ≤ ξ·aξ ≤ Λ|ξ|²`, `λ ≤ Λ`, positivity and finiteness.
    pub fn check_invariants(&self) -> Result<()> {
        let d = self.grid.d;
        for cell in 0..self.num_cells() {
            let (lo, hi) = (self.lower[cell], self.upper[cell]);
            if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidSpec(format!(
                    "cell {cell}: need 0 < λ ≤ Λ < ∞ (λ={lo}, Λ={hi})"
                )));
            }
            let a = self.a(cell);
            let (emin, emax) = sym_eig_range(a, d);
            let tol = 1e-10 * hi;
            if emin < lo - tol || emax > hi + tol {
                return Err(Error::InvalidSpec(format!(
                    "cell {cell}: spectrum of a [{emin}, {emax}] outside [λ, Λ] = [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Frobenius norm of the off-diagonal part of `a`, summed over cells.
    pub fn offdiagonal_frobenius(&self) -> f64 {
        let d = self.grid.d;
        let mut s = 0.0;
        for cell in 0..self.num_cells() {
            let a = self.a(cell);
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        s += a[i * d + j] * a[i * d + j];
                    }
                }
            }
        }
        s.sqrt()
    }

    /// Copy with `λ → c_lower λ`, `Λ → c_upper Λ`, `a → c_a a`.
    pub fn rescaled(&self, c_lower: f64, c_upper: f64, c_a: f64) -> FieldSample {
        let mut s = self.clone();
        s.lower.iter_mut().for_each(|v| *v *= c_lower);
        s.upper.iter_mut().for_each(|v| *v *= c_upper);
        s.conductivity.iter_mut().for_each(|v| *v *= c_a);
        s
    }
}

/// Smallest and largest eigenvalue of a small symmetric matrix (cyclic Jacobi).
pub(crate) fn sym_eig_range(a: &[f64], d: usize) -> (f64, f64) {
    if d == 1 {
        return (a[0], a[0]);
    }
    if d == 2 {
        let (p, q, r) = (a[0], 0.5 * (a[1] + a[2]), a[3]);
        let m = 0.5 * (p + r);
        let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
        return (m - disc, m + disc);
    }
    let mut m = a.to_vec();
    for _sweep in 0..50 {
        let mut off = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    off += m[i * d + j] * m[i * d + j];
                }
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let diag: Vec<f64> = (0..d).map(|i| m[i * d + i]).collect();
    (
        diag.iter().copied().fold(f64::INFINITY, f64::min),
        diag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    if d == 2 {
        let th: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let (s, c) = th.sin_cos();
        return vec![c, -s, s, c];
    }
    // Gram-Schmidt on a Gaussian matrix, columns stored row-major
    let mut q: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
    for j in 0..d {
        for k in 0..j {
            let dot: f64 = (0..d).map(|i| q[i * d + j] * q[i * d + k]).sum();
            for i in 0..d {
                q[i * d + j] -= dot * q[i * d + k];
            }
        }
        let norm: f64 = (0..d).map(|i| q[i * d + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..d {
            q[i * d + j] /= norm;
        }
    }
    q
}

/// `R diag(values) Rᵀ`.
fn rotate_diagonal(r: &[f64], values: &[f64], d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let v: f64 = (0..d).map(|k| r[i * d + k] * values[k] * r[j * d + k]).sum();
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
    a
}

fn isotropic(value: f64, d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        a[i * d + i] = value;
    }
    a
}

/// Draws the environment described by `spec`; a pure function of `spec`.
pub fn generate_environment(spec: &EnvironmentSpec) -> Result<FieldSample> {
    spec.validate()?;
    let grid = spec.grid()?;
    let d = grid.d;
    let cells = grid.num_sites();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut lower = Vec::with_capacity(cells);
    let mut upper = Vec::with_capacity(cells);
    let mut conductivity = Vec::with_capacity(cells * d * d);

    match &spec.model {
        Model::Constant => {
            for _ in 0..cells {
                lower.push(1.0);
                upper.push(1.0);
                conductivity.extend(isotropic(1.0, d));
            }
        }
        Model::IidCellPareto => {
            let mut spread = vec![0.0; d];
            for _ in 0..cells {
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                let lo = (1.0 - u).powf(1.0 / spec.tail_lambda_inv);
                let hi = (1.0 - v).powf(-1.0 / spec.tail_lambda).max(lo);
                let rot = random_rotation(&mut rng, d);
                let cap = spec.anisotropy.min(hi / lo);
                for g in spread.iter_mut() {
                    let w: f64 = rng.random();
                    *g = lo * (1.0 + w * (cap - 1.0));
                }
                lower.push(lo);
                upper.push(hi);
                conductivity.extend(rotate_diagonal(&rot, &spread, d));
            }
        }
        Model::Lognormal {
            sigma,
            correlation_length,
        } => {
            let g = gaussian_field(&grid, *correlation_length, &mut rng);
            let mut spread = vec![0.0; d];
            for &gi in &g {
                let lo = (sigma * gi).exp();
                let hi = lo * spec.anisotropy;
                let rot = random_rotation(&mut rng, d);
                for s in spread.iter_mut() {
                    let w: f64 = rng.random();
                    *s = lo * (1.0 + w * (spec.anisotropy - 1.0));
                }
                lower.push(lo);
                upper.push(hi);
                conductivity.extend(rotate_diagonal(&rot, &spread, d));
            }
        }
        Model::TrapCounterexample { beta } => {
            let center = vec![0.5 * grid.side(); d];
            for cell in 0..cells {
                let x = grid.position(cell);
                let rho = x
                    .iter()
                    .zip(&center)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    / grid.h;
                let k = if rho < 1.0 { 0.0 } else { rho.log2().floor() };
                let lo = (-beta * k).exp2();
                let hi = (beta * k).exp2();
                lower.push(lo);
                upper.push(hi);
                conductivity.extend(isotropic(lo, d));
            }
        }
        Model::Layered { sigma } => {
            let layers: Vec<f64> = (0..grid.n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (sigma * z).exp()
                })
                .collect();
            for cell in 0..cells {
                let kappa = layers[grid.coord(cell, 0)];
                lower.push(kappa);
                upper.push(kappa);
                conductivity.extend(isotropic(kappa, d));
            }
        }
    }
    FieldSample::from_parts(spec.clone(), lower, upper, conductivity)
}

/// Empirical moment statistics of a sample over the full torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    #[serde(with = "ext_f64")]
    pub p: f64,
    #[serde(with = "ext_f64")]
    pub q: f64,
    /// Mean of `Λ^p` (max of `Λ` when `p = ∞`).
    #[serde(with = "ext_f64")]
    pub mean_upper_p: f64,
    /// Mean of `λ^{-q}` (max of `λ^{-1}` when `q = ∞`).
    #[serde(with = "ext_f64")]
    pub mean_lower_inv_q: f64,
    pub condition_value: f64,
    pub condition_ok: bool,
    /// `a_Λ`, the mean of `Λ`.
    pub mean_upper: f64,
}

/// Mean of `v^r`, or the maximum when `r = ∞`. Overflow yields `+∞`.
pub fn power_mean(values: impl Iterator<Item = f64>, r: f64) -> f64 {
    if r.is_infinite() {
        return values.fold(0.0, f64::max);
    }
    let mut n = 0usize;
    let total = crate::stats::ordered_sum(values.map(|v| {
        n += 1;
        v.powf(r)
    }));
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub fn moment_report(sample: &FieldSample, p: f64, q: f64) -> Result<MomentReport> {
    if !(p >= 1.0) || !(q >= 1.0) {
        return Err(Error::InvalidArgument(format!("need p, q ≥ 1 (got {p}, {q})")));
    }
    let mean_upper_p = power_mean(sample.upper.iter().copied(), p);
    let mean_lower_inv_q = power_mean(sample.lower.iter().map(|v| 1.0 / v), q);
    let condition_value = 1.0 / p + 1.0 / q;
    let condition_ok =
        crate::funcineq::admissible(p, q, sample.dimension()) && mean_upper_p.is_finite() && mean_lower_inv_q.is_finite();
    let mean_upper = power_mean(sample.upper.iter().copied(), 1.0);
    Ok(MomentReport {
        p,
        q,
        mean_upper_p,
        mean_lower_inv_q,
        condition_value,
        condition_ok,
        mean_upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(model: Model, n: usize, seed: u64) -> EnvironmentSpec {
        EnvironmentSpec::new(2, n, model, seed)
    }

    #[test]
    fn constant_environment_is_identity() {
        let s = generate_environment(&spec(Model::Constant, 8, 3)).unwrap();
        assert!(s.lower.iter().chain(&s.upper).all(|&v| v == 1.0));
        for c in 0..s.num_cells() {
            assert_eq!(s.a(c), &[1.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut bad = spec(Model::Constant, 8, 0);
        bad.dimension = 1;
        bad.cells_per_side = 2;
        bad.cell_size = 0.0;
        let problems = bad.problems();
        assert_eq!(problems.len(), 3, "{problems:?}");
        assert!(generate_environment(&bad).is_err());
        let mut odd = spec(Model::Constant, 12, 0);
        odd.cells_per_side = 12;
        assert!(generate_environment(&odd).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let sp = spec(
            Model::Lognormal {
                sigma: 0.7,
                correlation_length: 3.0,
            },
            16,
            42,
        );
        let a = generate_environment(&sp).unwrap();
        let b = generate_environment(&sp).unwrap();
        assert_eq!(a, b);
        let c = generate_environment(&EnvironmentSpec { seed: 43, ..sp }).unwrap();
        assert_ne!(a.lower, c.lower);
    }

    #[test]
    fn every_model_satisfies_ellipticity_bounds() {
        let models = [
            Model::IidCellPareto,
            Model::Lognormal {
                sigma: 1.0,
                correlation_length: 2.0,
            },
            Model::TrapCounterexample { beta: 1.0 },
            Model::Layered { sigma: 0.5 },
        ];
        for m in models {
            let s = generate_environment(&spec(m, 32, 5).with_anisotropy(4.0)).unwrap();
            s.check_invariants().unwrap();
        }
        let s3 = generate_environment(&EnvironmentSpec::new(3, 8, Model::IidCellPareto, 1)).unwrap();
        s3.check_invariants().unwrap();
    }

    #[test]
    fn anisotropy_coupling_is_monotone() {
        let base = spec(Model::IidCellPareto, 32, 9);
        let lo = generate_environment(&base.clone().with_anisotropy(1.5)).unwrap();
        let hi = generate_environment(&base.with_anisotropy(6.0)).unwrap();
        for c in 0..lo.num_cells() {
            let r_lo = lo.upper[c] / lo.lower[c];
            let r_hi = hi.upper[c] / hi.lower[c];
            assert!(r_hi >= r_lo);
            let (_, e_lo) = sym_eig_range(lo.a(c), 2);
            let (_, e_hi) = sym_eig_range(hi.a(c), 2);
            assert!(e_hi >= e_lo - 1e-12);
        }
    }

    #[test]
    fn constant_moments() {
        let s = generate_environment(&spec(Model::Constant, 8, 0)).unwrap();
        let r = moment_report(&s, 3.0, 3.0).unwrap();
        assert_eq!(r.mean_upper_p, 1.0);
        assert_eq!(r.mean_lower_inv_q, 1.0);
        assert!(r.condition_ok);
        let inf = moment_report(&s, f64::INFINITY, f64::INFINITY).unwrap();
        assert_eq!((inf.mean_upper_p, inf.mean_lower_inv_q), (1.0, 1.0));
        assert!(inf.condition_ok);
        // 1/2 + 1/2 = 2/d sits on the boundary, which is excluded
        let tight = moment_report(&s, 2.0, 2.0).unwrap();
        assert_eq!(tight.condition_value, 1.0);
        assert!(!tight.condition_ok);
    }

    #[test]
    fn overflowing_moments_fail_the_condition() {
        let s = generate_environment(&spec(Model::Constant, 8, 0)).unwrap();
        let big = s.rescaled(1.0, 1e200, 1.0);
        let r = moment_report(&big, 4.0, 4.0).unwrap();
        assert!(r.mean_upper_p.is_infinite());
        assert!(!r.condition_ok);
    }

    #[test]
    fn offdiagonal_norm_vanishes_for_isotropic_fields() {
        let s = generate_environment(&spec(Model::Layered { sigma: 1.0 }, 8, 0)).unwrap();
        assert_eq!(s.offdiagonal_frobenius(), 0.0);
    }

    #[test]
    fn jacobi_eigen_range_3d() {
        let a = [2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let (lo, hi) = sym_eig_range(&a, 3);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 5.0).abs() < 1e-12);
    }
}
