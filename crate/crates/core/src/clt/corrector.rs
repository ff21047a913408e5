//! Periodic cell problem and the homogenized matrix `a_hom`.

use serde::{Deserialize, Serialize};

use super::target::{CltTarget, SigmaMethod};
use crate::env::FieldSample;
use crate::form::{assemble_form, FormMatrix};
use crate::grid::TorusGrid;
use crate::sparse::{pcg, remove_weighted_mean};
use crate::stats::ordered_sum;
use crate::{Error, Result};

/// Relative residual of every cell-problem solve.
pub const CORRECTOR_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectorField {
    /// `chi[e]`: the corrector in direction `e`, zero `m`-weighted mean.
    pub chi: Vec<Vec<f64>>,
    /// Rows of `a_hom`.
    pub a_hom: Vec<Vec<f64>>,
    /// Relative residual of each cell problem.
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    /// `(Reuss, Voigt)` bounds per direction: harmonic and arithmetic face means.
    pub bounds: Vec<(f64, f64)>,
    /// Harmonic mean of `λ` over the cells.
    pub lambda_harmonic: f64,
}

/// Face gradient of `ℓ_e + χ_e` across the face `site * d + axis`: the sawtooth
/// `ℓ_e` rises by `h` across every face normal to `e`, the wrap face included.
fn face_gradient(grid: &TorusGrid, chi: &[f64], e: usize, site: usize, axis: usize) -> f64 {
    let j = grid.neighbor(site, axis, true);
    let jump = if axis == e { grid.h } else { 0.0 };
    jump + chi[j] - chi[site]
}

/// Corrector of an assembled form.
pub fn corrector_for_form(form: &FormMatrix, tolerance: f64, max_iterations: usize) -> Result<CorrectorField> {
    let grid = &form.grid;
    let d = grid.d;
    let n = form.num_sites();
    let mut chi = Vec::with_capacity(d);
    let mut residuals = Vec::with_capacity(d);
    let mut iterations = Vec::with_capacity(d);
    for e in 0..d {
        // b = −E(ℓ_e, ·)
        let mut b = vec![0.0; n];
        for i in 0..n {
            let c = form.conductance[i * d + e] * grid.h;
            let j = grid.neighbor(i, e, true);
            b[i] += c;
            b[j] -= c;
        }
        let mut x = vec![0.0; n];
        let stats = pcg(&form.stiffness, &b, &mut x, tolerance, max_iterations)?;
        remove_weighted_mean(&mut x, &form.mass);
        let mut r = vec![0.0; n];
        form.stiffness.matvec(&x, &mut r);
        let bnorm = ordered_sum(b.iter().map(|v| v * v)).sqrt();
        let rnorm = ordered_sum(r.iter().zip(&b).map(|(a, c)| (a - c).powi(2))).sqrt();
        residuals.push(if bnorm > 0.0 { rnorm / bnorm } else { rnorm });
        iterations.push(stats.iterations);
        chi.push(x);
    }
    let volume = grid.volume();
    let a_hom: Vec<Vec<f64>> = (0..d)
        .map(|e| {
            (0..d)
                .map(|f| {
                    ordered_sum((0..n).flat_map(|i| {
                        let chi = &chi;
                        (0..d).map(move |axis| {
                            form.conductance[i * d + axis]
                                * face_gradient(grid, &chi[e], e, i, axis)
                                * face_gradient(grid, &chi[f], f, i, axis)
                        })
                    })) / volume
                })
                .collect()
        })
        .collect();
    let scale = grid.h.powi(d as i32 - 2);
    let bounds = (0..d)
        .map(|axis| {
            let c: Vec<f64> = (0..n).map(|i| form.conductance[i * d + axis] / scale).collect();
            let harmonic = n as f64 / ordered_sum(c.iter().map(|v| 1.0 / v));
            let arithmetic = ordered_sum(c.iter().copied()) / n as f64;
            (harmonic, arithmetic)
        })
        .collect();
    Ok(CorrectorField {
        chi,
        a_hom,
        residuals,
        iterations,
        bounds,
        lambda_harmonic: f64::NAN,
    })
}

/// Solves the cell problem `E(χ_e, v) = −E(ℓ_e, v)` in every direction.
pub fn solve_corrector(sample: &FieldSample, grid: &TorusGrid) -> Result<CorrectorField> {
    let form = assemble_form(sample, grid)?;
    let mut field = corrector_for_form(&form, CORRECTOR_TOLERANCE, 100_000)?;
    field.lambda_harmonic = sample.lower.len() as f64 / ordered_sum(sample.lower.iter().map(|v| 1.0 / v));
    Ok(field)
}

impl CorrectorField {
    /// Smallest eigenvalue of `a_hom`.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.a_hom.len();
        nalgebra::DMatrix::from_fn(d, d, |i, j| self.a_hom[i][j])
            .symmetric_eigenvalues()
            .min()
    }

    /// Every `a_hom[e][e]` lies between its Reuss and Voigt bounds (relative slack `tol`).
    pub fn within_bounds(&self, tol: f64) -> bool {
        self.bounds
            .iter()
            .enumerate()
            .all(|(e, &(lo, hi))| self.a_hom[e][e] >= lo * (1.0 - tol) && self.a_hom[e][e] <= hi * (1.0 + tol))
    }
}

/// `Σ = 2 a_hom / a_Λ`.
pub fn sigma_from_corrector(corrector: &CorrectorField, a_lambda: f64) -> Result<CltTarget> {
    if !(a_lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("a_Λ must be positive (got {a_lambda})")));
    }
    let sigma = corrector
        .a_hom
        .iter()
        .map(|row| row.iter().map(|v| 2.0 * v / a_lambda).collect())
        .collect();
    CltTarget::new(sigma, a_lambda, SigmaMethod::Corrector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_environment, EnvironmentSpec, Model};

    #[test]
    fn constant_environment_has_no_corrector() {
        let s = generate_environment(&EnvironmentSpec::new(2, 16, Model::Constant, 1)).unwrap();
        let c = solve_corrector(&s, &s.grid).unwrap();
        assert!(c.chi.iter().flatten().all(|v| v.abs() < 1e-12));
        for e in 0..2 {
            for f in 0..2 {
                let want = if e == f { 1.0 } else { 0.0 };
                assert!((c.a_hom[e][f] - want).abs() < 1e-12);
            }
        }
        let t = sigma_from_corrector(&c, 1.0).unwrap();
        assert!((t.sigma[0][0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pareto_corrector_respects_the_bounds() {
        let s = generate_environment(&EnvironmentSpec::new(2, 32, Model::IidCellPareto, 4)).unwrap();
        let c = solve_corrector(&s, &s.grid).unwrap();
        assert!(c.residuals.iter().all(|&r| r <= 1e-9));
        assert!(c.within_bounds(1e-9));
        assert!(c.min_eigenvalue() >= c.lambda_harmonic);
    }
}
