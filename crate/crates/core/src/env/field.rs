use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::grid::TorusGrid;

/// In-place d-dimensional FFT by 1-D transforms along each axis (unnormalized).
pub(crate) fn fft_nd(data: &mut [Complex64], grid: &TorusGrid, inverse: bool) {
    let n = grid.n;
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..grid.d {
        let stride = grid.stride(axis);
        for start in 0..data.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (k, l) in line.iter_mut().enumerate() {
                *l = data[start + k * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (k, l) in line.iter().enumerate() {
                data[start + k * stride] = *l;
            }
        }
    }
}

/// Unit-variance stationary Gaussian field with covariance `exp(-|x|/ℓ)` in
/// torus distance, sampled exactly by diagonalizing the circulant covariance.
/// Negative circulant eigenvalues (the exponential kernel is not always
/// positive definite on a small torus) are clamped to zero.
pub fn gaussian_field(grid: &TorusGrid, correlation_length: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let total = grid.num_sites();
    let origin = 0;
    let mut cov: Vec<Complex64> = (0..total)
        .map(|i| {
            let r = grid.distance(origin, i);
            Complex64::new((-r / correlation_length).exp(), 0.0)
        })
        .collect();
    fft_nd(&mut cov, grid, false);
    let eig: Vec<f64> = cov.iter().map(|c| c.re.max(0.0)).collect();
    let variance = eig.iter().sum::<f64>() / total as f64;

    let mut w: Vec<Complex64> = (0..total)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    fft_nd(&mut w, grid, false);
    for (wi, &e) in w.iter_mut().zip(&eig) {
        *wi *= e.sqrt();
    }
    fft_nd(&mut w, grid, true);
    let scale = 1.0 / (total as f64 * variance.sqrt());
    w.iter().map(|c| c.re * scale).collect()
}
