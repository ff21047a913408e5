//! Shared fixtures and independent oracles for the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use heatlab::env::{generate_environment, EnvironmentSpec, FieldSample, Model};
use heatlab::form::{assemble_form, FormMatrix};
use heatlab::heat::StepKind;

pub fn environment(model: Model, n: usize, seed: u64) -> (FieldSample, FormMatrix) {
    let sample = generate_environment(&EnvironmentSpec::new(2, n, model, seed)).unwrap();
    let form = assemble_form(&sample, &sample.grid).unwrap();
    (sample, form)
}

pub fn lognormal() -> Model {
    Model::Lognormal {
        sigma: 0.5,
        correlation_length: 2.0,
    }
}

/// Dense spectral decomposition of the generator `M⁻¹K`.
///
/// `S = M^{-1/2} K M^{-1/2} = Q diag(μ) Qᵀ`, so any function `f` of the
/// generator acts as `M^{-1/2} Q f(μ) Qᵀ M^{1/2}`.
pub struct DenseSemigroup {
    sqrt_mass: Vec<f64>,
    q: DMatrix<f64>,
    mu: DVector<f64>,
}

impl DenseSemigroup {
    pub fn new(form: &FormMatrix) -> Self {
        let n = form.num_sites();
        let sqrt_mass: Vec<f64> = form.mass.iter().map(|m| m.sqrt()).collect();
        let mut s = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for (j, v) in form.stiffness.row(i) {
                s[(i, j)] = v / (sqrt_mass[i] * sqrt_mass[j]);
            }
        }
        let eig = SymmetricEigen::new(s);
        Self {
            sqrt_mass,
            q: eig.eigenvectors,
            mu: eig.eigenvalues,
        }
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn apply(&self, u0: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let w = DVector::from_iterator(u0.len(), u0.iter().zip(&self.sqrt_mass).map(|(u, s)| u * s));
        let mut c = self.q.tr_mul(&w);
        for (ck, &mu) in c.iter_mut().zip(self.mu.iter()) {
            *ck *= f(mu);
        }
        let v = &self.q * c;
        v.iter().zip(&self.sqrt_mass).map(|(v, s)| v / s).collect()
    }

    /// Exact `e^{-tM⁻¹K} u₀`.
    pub fn exact(&self, u0: &[f64], t: f64) -> Vec<f64> {
        self.apply(u0, |mu| (-t * mu).exp())
    }

    /// The time-stepping scheme with the given step kinds, each of length `dt`.
    pub fn stepped(&self, u0: &[f64], dt: f64, kinds: &[StepKind]) -> Vec<f64> {
        self.apply(u0, |mu| kinds.iter().map(|&k| amplification(k, dt * mu)).product())
    }

    /// Dense heat kernel `p_t(x, y)` against the speed measure, full matrix.
    pub fn exact_kernel(&self, t: f64) -> DMatrix<f64> {
        let n = self.sqrt_mass.len();
        let decay = DMatrix::from_diagonal(&self.mu.map(|mu| (-t * mu).exp()));
        let core = &self.q * decay * self.q.transpose();
        DMatrix::from_fn(n, n, |i, j| core[(i, j)] / (self.sqrt_mass[i] * self.sqrt_mass[j]))
    }
}

/// Scalar amplification of one θ-step at `z = Δt μ`.
pub fn amplification(kind: StepKind, z: f64) -> f64 {
    match kind {
        StepKind::CrankNicolson => (1.0 - 0.5 * z) / (1.0 + 0.5 * z),
        StepKind::ImplicitEuler => 1.0 / (1.0 + z),
    }
}

/// Periodized isotropic Gaussian `Σ_k (2πσ²t)^{-d/2} exp(-|x + kL|²/(2σ²t))`.
pub fn periodized_gaussian(x: &[f64], side: f64, sigma2: f64, t: f64) -> f64 {
    let d = x.len();
    let var = sigma2 * t;
    let norm = (2.0 * std::f64::consts::PI * var).powf(-(d as f64) / 2.0);
    let images = 3i64;
    let mut total = 0.0;
    let mut idx = vec![-images; d];
    loop {
        let r2: f64 = x.iter().zip(&idx).map(|(xi, &k)| (xi + k as f64 * side).powi(2)).sum();
        total += (-r2 / (2.0 * var)).exp();
        let mut axis = 0;
        loop {
            if axis == d {
                return norm * total;
            }
            idx[axis] += 1;
            if idx[axis] <= images {
                break;
            }
            idx[axis] = -images;
            axis += 1;
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
