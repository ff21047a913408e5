use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::form::Ball;
use crate::grid::TorusGrid;

/// Where a random test function lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    /// Vanishes on and outside the sphere of the ball.
    Compact,
    /// Defined on a neighborhood of the closed ball.
    Local,
}

/// Seed of trial `k` derived from a base seed.
pub fn trial_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn bump(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Gaussian white noise convolved with the bump `exp(1 − 1/(1 − |y|²/w²))`.
///
/// With [`Support::Compact`] the noise is confined to `B(x, r − w)`, so the
/// result vanishes on the sphere of the ball. With [`Support::Local`] the
/// noise covers `B(x, r + w + 2h)` and the result is kept on `B(x, r + 2h)`.
/// Returns a torus array.
pub fn smoothed_noise(grid: &TorusGrid, ball: &Ball, support: Support, width: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.num_sites();
    let h = grid.h;
    let (noise_radius, out_radius) = match support {
        Support::Compact => ((ball.radius - width).max(0.0), ball.radius),
        Support::Local => (ball.radius + width + 2.0 * h, ball.radius + 2.0 * h),
    };
    let mut noise = vec![0.0; n];
    for s in grid.ball_sites(ball.center, noise_radius) {
        noise[s] = rng.sample(StandardNormal);
    }
    let reach = (width / h).floor() as i64;
    let side = (2 * reach + 1) as usize;
    let mut stencil = Vec::new();
    for k in 0..side.pow(grid.d as u32) {
        let mut rem = k;
        let off: Vec<i64> = (0..grid.d)
            .map(|_| {
                let o = (rem % side) as i64 - reach;
                rem /= side;
                o
            })
            .collect();
        let dist = off.iter().map(|&o| (o as f64 * h).powi(2)).sum::<f64>().sqrt();
        let w = bump(dist / width);
        if w > 0.0 {
            stencil.push((off.iter().map(|o| -o).collect::<Vec<i64>>(), w));
        }
    }
    let mut u = vec![0.0; n];
    for y in grid.ball_sites(ball.center, out_radius) {
        let mut acc = 0.0;
        for (off, w) in &stencil {
            acc += w * noise[grid.shift(y, off)];
        }
        u[y] = acc;
    }
    u
}
