//! Gaussian targets `a_Λ^{-1} k_t^Σ` and the second-moment covariance estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::corrector::{sigma_from_corrector, solve_corrector};
use crate::env::FieldSample;
use crate::form::FormMatrix;
use crate::heat::{check_torus_guard, kernel_columns, prior_spread, probe_sites, HeatOptions};
use crate::stats::ordered_sum;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    SecondMoment,
    Corrector,
}

/// Limiting covariance `Σ` and the mean speed `a_Λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltTarget {
    /// Rows of `Σ`.
    pub sigma: Vec<Vec<f64>>,
    pub a_lambda: f64,
    pub method: SigmaMethod,
    /// Kernel time of the second-moment estimate.
    pub time: Option<f64>,
}

impl CltTarget {
    pub fn new(sigma: Vec<Vec<f64>>, a_lambda: f64, method: SigmaMethod) -> Result<Self> {
        let t = CltTarget {
            sigma,
            a_lambda,
            method,
            time: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.sigma[i][j])
    }

    /// Symmetric with positive eigenvalues and `a_Λ > 0`.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.sigma.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch("Σ must be a nonempty square matrix".into()));
        }
        let m = self.matrix();
        if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
            return Err(Error::InvalidArgument("Σ is not symmetric".into()));
        }
        if !(self.a_lambda > 0.0) || !self.a_lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("a_Λ must be positive (got {})", self.a_lambda)));
        }
        let min = m.symmetric_eigenvalues().min();
        if !(min > 0.0) {
            return Err(Error::InvalidArgument(format!("Σ is not positive definite (λ_min = {min:e})")));
        }
        Ok(())
    }

    /// `a_Λ^{-1} k_t^Σ(x)`.
    pub fn density(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(gaussian_kernel(&self.sigma, t, x)? / self.a_lambda)
    }

    /// Largest eigenvalue of `Σ`.
    pub fn spread(&self) -> f64 {
        self.matrix().symmetric_eigenvalues().max()
    }
}

/// `k_t^Σ(x) = ((2πt)^d det Σ)^{-1/2} exp(−x·Σ^{-1}x / 2t)`.
pub fn gaussian_kernel(sigma: &[Vec<f64>], t: f64, x: &[f64]) -> Result<f64> {
    let d = sigma.len();
    if x.len() != d || sigma.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch(format!("Σ is {d}×{d}, x has {} entries", x.len())));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time must be positive (got {t})")));
    }
    let m = DMatrix::from_fn(d, d, |i, j| sigma[i][j]);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("Σ is singular or not positive definite".into()))?;
    let det = chol.l().diagonal().product().powi(2);
    let v = DVector::from_column_slice(x);
    let q = v.dot(&chol.solve(&v));
    Ok((-q / (2.0 * t)).exp() / ((2.0 * std::f64::consts::PI * t).powi(d as i32) * det).sqrt())
}

/// Mean speed `a_Λ` over the torus.
pub fn mean_speed(form: &FormMatrix) -> f64 {
    ordered_sum(form.speed.iter().copied()) / form.num_sites() as f64
}

/// Second moment of a kernel column, `(1/t) Σ_j (x_j − o)(x_j − o)ᵀ p_t(o, j) m_j`,
/// with torus-minimal displacements.
pub fn second_moment(form: &FormMatrix, o: usize, t: f64, column: &[f64]) -> Vec<Vec<f64>> {
    let d = form.grid.d;
    let disp: Vec<Vec<f64>> = (0..form.num_sites()).map(|j| form.grid.displacement(o, j)).collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    ordered_sum((0..form.num_sites()).map(|j| disp[j][a] * disp[j][b] * column[j] * form.mass[j])) / t
                })
                .collect()
        })
        .collect()
}

/// `Σ_est(t)` from one kernel column; errors when the torus guard fails at `t`.
pub fn sigma_second_moment(form: &FormMatrix, o: usize, t: f64, opts: &HeatOptions) -> Result<CltTarget> {
    sigma_second_moment_over(form, &[o], t, opts)
}

/// `Σ_est(t)` averaged over the kernel columns of several origins.
pub fn sigma_second_moment_over(form: &FormMatrix, origins: &[usize], t: f64, opts: &HeatOptions) -> Result<CltTarget> {
    if origins.is_empty() {
        return Err(Error::InvalidArgument("no origins".into()));
    }
    check_torus_guard(form, t)?;
    let (cols, _) = kernel_columns(form, origins, t, opts)?;
    let d = form.grid.d;
    let mut sigma = vec![vec![0.0; d]; d];
    for col in &cols {
        let m = second_moment(form, col.origin, t, &col.values);
        for a in 0..d {
            for b in 0..d {
                sigma[a][b] += m[a][b] / origins.len() as f64;
            }
        }
    }
    Ok(CltTarget {
        sigma,
        a_lambda: mean_speed(form),
        method: SigmaMethod::SecondMoment,
        time: Some(t),
    })
}

/// Largest `t` allowed by the torus guard.
pub fn guard_time(form: &FormMatrix) -> f64 {
    (form.grid.side() / 12.0).powi(2) / prior_spread(form)
}

/// `‖A − B‖_op / ‖B‖_op` for symmetric matrices.
pub fn relative_operator_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = b.len();
    let ma = DMatrix::from_fn(d, d, |i, j| a[i][j]);
    let mb = DMatrix::from_fn(d, d, |i, j| b[i][j]);
    let op = |m: &DMatrix<f64>| m.symmetric_eigenvalues().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    op(&(ma - &mb)) / op(&mb)
}

/// Relative drift `‖Σ_est(t) − Σ_est(2t)‖_op / ‖Σ_est(t)‖_op`.
pub fn sigma_drift(form: &FormMatrix, o: usize, t: f64, opts: &HeatOptions) -> Result<f64> {
    let a = sigma_second_moment(form, o, t, opts)?;
    let b = sigma_second_moment(form, o, 2.0 * t, opts)?;
    Ok(relative_operator_gap(&b.sigma, &a.sigma))
}

/// Disagreement tolerated between the two covariance estimators.
pub const CROSS_CHECK_TOLERANCE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub corrector: CltTarget,
    pub second_moment: CltTarget,
    /// `‖Σ_corr − Σ_est‖_op / ‖Σ_est‖_op`.
    pub relative_gap: f64,
    pub agrees: bool,
}

impl CrossCheck {
    pub fn new(corrector: CltTarget, second_moment: CltTarget) -> Self {
        let relative_gap = relative_operator_gap(&corrector.sigma, &second_moment.sigma);
        Self {
            agrees: relative_gap <= CROSS_CHECK_TOLERANCE,
            corrector,
            second_moment,
            relative_gap,
        }
    }

    /// The corrector target when the estimators agree, otherwise `Σ_est`.
    pub fn selected(&self) -> &CltTarget {
        if self.agrees {
            &self.corrector
        } else {
            &self.second_moment
        }
    }
}

/// Fraction of [`guard_time`] at which [`sigma_cross_check`] evaluates `Σ_est`.
pub const CROSS_CHECK_TIME_FRACTION: f64 = 0.9;

/// Corrector `Σ` against `Σ_est` averaged over the probe sites at
/// `CROSS_CHECK_TIME_FRACTION × guard_time`.
pub fn sigma_cross_check(sample: &FieldSample, form: &FormMatrix, opts: &HeatOptions) -> Result<CrossCheck> {
    let corrector = solve_corrector(sample, &form.grid)?;
    let corr = sigma_from_corrector(&corrector, mean_speed(form))?;
    let t = CROSS_CHECK_TIME_FRACTION * guard_time(form);
    let est = sigma_second_moment_over(form, &probe_sites(&form.grid), t, opts)?;
    Ok(CrossCheck::new(corr, est))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_at_the_origin() {
        let i = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let k = gaussian_kernel(&i, 1.0, &[0.0, 0.0]).unwrap();
        assert!((k - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        let four = vec![vec![4.0, 0.0], vec![0.0, 4.0]];
        let k4 = gaussian_kernel(&four, 1.0, &[0.0, 0.0]).unwrap();
        assert!((k4 - 1.0 / (8.0 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn kernel_integrates_to_one() {
        let s = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
        let t = 0.7;
        let half = 6.0 * (t * 2.2f64).sqrt();
        let n = 600;
        let dx = 2.0 * half / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [-half + (i as f64 + 0.5) * dx, -half + (j as f64 + 0.5) * dx];
                total += gaussian_kernel(&s, t, &x).unwrap() * dx * dx;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn singular_sigma_is_rejected() {
        let s = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(gaussian_kernel(&s, 1.0, &[0.0, 0.0]).is_err());
        assert!(CltTarget::new(s, 1.0, SigmaMethod::Corrector).is_err());
    }
}
