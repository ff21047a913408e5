//! Periodic lattice geometry.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cubic torus of `n^d` sites with spacing `h`; site `i` sits at the center of
/// cell `i`, i.e. at `(k + 1/2)·h` along every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub d: usize,
    pub n: usize,
    pub h: f64,
}

impl TorusGrid {
    pub fn new(d: usize, n: usize, h: f64) -> Result<Self> {
        if d < 1 || n < 2 || !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "torus grid needs d ≥ 1, n ≥ 2, h > 0 (got d={d}, n={n}, h={h})"
            )));
        }
        Ok(Self { d, n, h })
    }

    pub fn num_sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Side length `n·h` of the torus.
    pub fn side(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn volume(&self) -> f64 {
        self.side().powi(self.d as i32)
    }

    /// Volume `h^d` of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    /// Multi-index of a flat site index; axis 0 varies fastest.
    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            c.push(idx % self.n);
            idx /= self.n;
        }
        c
    }

    pub fn coord(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.n
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        coords
            .iter()
            .rev()
            .fold(0usize, |acc, &c| acc * self.n + (c % self.n))
    }

    /// Neighbor of `idx` one step along `axis` in direction `+1` (`forward`) or `-1`.
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> usize {
        let s = self.stride(axis);
        let c = (idx / s) % self.n;
        if forward {
            if c + 1 == self.n {
                idx + s - self.n * s
            } else {
                idx + s
            }
        } else if c == 0 {
            idx + (self.n - 1) * s
        } else {
            idx - s
        }
    }

    /// Physical position of a site center.
    pub fn position(&self, idx: usize) -> Vec<f64> {
        self.coords(idx)
            .into_iter()
            .map(|c| (c as f64 + 0.5) * self.h)
            .collect()
    }

    /// Torus-minimal lattice offset from `from` to `to`, in sites per axis.
    pub fn offset(&self, from: usize, to: usize) -> Vec<i64> {
        let n = self.n as i64;
        (0..self.d)
            .map(|axis| {
                let a = self.coord(from, axis) as i64;
                let b = self.coord(to, axis) as i64;
                let mut o = (b - a).rem_euclid(n);
                if o > n / 2 {
                    o -= n;
                }
                o
            })
            .collect()
    }

    /// Torus-minimal physical displacement `to - from`.
    pub fn displacement(&self, from: usize, to: usize) -> Vec<f64> {
        self.offset(from, to)
            .into_iter()
            .map(|o| o as f64 * self.h)
            .collect()
    }

    pub fn distance(&self, from: usize, to: usize) -> f64 {
        self.offset(from, to)
            .into_iter()
            .map(|o| (o as f64 * self.h).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Site reached from `base` by a signed lattice offset, wrapping around.
    pub fn shift(&self, base: usize, offset: &[i64]) -> usize {
        let n = self.n as i64;
        let coords: Vec<usize> = (0..self.d)
            .map(|axis| (self.coord(base, axis) as i64 + offset[axis]).rem_euclid(n) as usize)
            .collect();
        self.index(&coords)
    }

    /// Site whose center is closest to the physical point `x` (torus-wrapped).
    pub fn nearest_site(&self, x: &[f64]) -> usize {
        let coords: Vec<usize> = x
            .iter()
            .map(|&xi| {
                let k = (xi / self.h - 0.5).round() as i64;
                k.rem_euclid(self.n as i64) as usize
            })
            .collect();
        self.index(&coords)
    }

    /// Site at the geometric center of the torus.
    pub fn center_site(&self) -> usize {
        self.index(&vec![self.n / 2; self.d])
    }

    /// Sites within torus distance `radius` of `center` (closed ball), ascending.
    pub fn ball_sites(&self, center: usize, radius: f64) -> Vec<usize> {
        let reach = (radius / self.h).floor() as i64;
        let r2 = radius * radius * (1.0 + 1e-12);
        let mut out = Vec::new();
        if 2 * reach + 1 >= self.n as i64 {
            for j in 0..self.num_sites() {
                if self.distance(center, j).powi(2) <= r2 {
                    out.push(j);
                }
            }
            return out;
        }
        let side = (2 * reach + 1) as usize;
        let total = side.pow(self.d as u32);
        let mut offset = vec![0i64; self.d];
        for k in 0..total {
            let mut rem = k;
            let mut d2 = 0.0;
            for o in offset.iter_mut() {
                *o = (rem % side) as i64 - reach;
                rem /= side;
                d2 += (*o as f64 * self.h).powi(2);
            }
            if d2 <= r2 {
                out.push(self.shift(center, &offset));
            }
        }
        out.sort_unstable();
        out
    }
}

/// Volume of the Euclidean unit ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// Analytic volume `|B(x, r)|`.
pub fn ball_volume(d: usize, radius: f64) -> f64 {
    unit_ball_volume(d) * radius.powi(d as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_and_wrap() {
        let g = TorusGrid::new(2, 8, 0.5).unwrap();
        let i = g.index(&[7, 3]);
        assert_eq!(g.coords(i), vec![7, 3]);
        assert_eq!(g.coords(g.neighbor(i, 0, true)), vec![0, 3]);
        assert_eq!(g.coords(g.neighbor(g.index(&[0, 0]), 1, false)), vec![0, 7]);
        assert_eq!(g.offset(g.index(&[7, 0]), g.index(&[0, 0])), vec![1, 0]);
        assert!((g.distance(g.index(&[0, 0]), g.index(&[7, 7])) - 0.5 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ball_sites_match_brute_force() {
        let g = TorusGrid::new(2, 16, 1.0).unwrap();
        let c = g.index(&[1, 14]);
        for r in [0.5, 2.0, 3.3, 5.0] {
            let fast = g.ball_sites(c, r);
            let slow: Vec<usize> = (0..g.num_sites()).filter(|&j| g.distance(c, j) <= r).collect();
            assert_eq!(fast, slow, "radius {r}");
        }
    }

    #[test]
    fn unit_ball_volumes() {
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-14);
    }
}
