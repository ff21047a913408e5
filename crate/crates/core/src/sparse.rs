//! Compressed sparse rows and a Jacobi-preconditioned conjugate gradient.
//!
//! Reductions are split into fixed chunks and summed in order, so results do
//! not depend on the number of threads.

use rayon::prelude::*;

use crate::{Error, Result};

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n×n` matrix, summing duplicate entries.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) out of range");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(j);
            values.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let row = |(i, yi): (usize, &mut f64)| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        };
        if self.n >= 2 * CHUNK {
            y.par_iter_mut().enumerate().for_each(row);
        } else {
            y.iter_mut().enumerate().for_each(row);
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    /// `i j value` lines, one per stored entry, 0-based.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::with_capacity(self.nnz() * 24);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                s.push_str(&format!("{i} {j} {v:.17e}\n"));
            }
        }
        s
    }
}

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

/// `diag(mass) + scale · stiffness`.
pub struct ShiftedOperator<'a> {
    pub mass: &'a [f64],
    pub stiffness: &'a CsrMatrix,
    pub scale: f64,
}

impl LinearOperator for ShiftedOperator<'_> {
    fn dim(&self) -> usize {
        self.mass.len()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.stiffness.matvec(x, y);
        let (m, c) = (self.mass, self.scale);
        y.iter_mut().zip(x).zip(m).for_each(|((yi, xi), mi)| *yi = mi * xi + c * *yi);
    }
    fn diagonal(&self) -> Vec<f64> {
        self.stiffness
            .diagonal()
            .iter()
            .zip(self.mass)
            .map(|(k, m)| m + self.scale * k)
            .collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() >= 2 * CHUNK {
        let parts: Vec<f64> = a
            .par_chunks(CHUNK)
            .zip(b.par_chunks(CHUNK))
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum())
            .collect();
        parts.iter().sum()
    } else {
        a.chunks(CHUNK)
            .zip(b.chunks(CHUNK))
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>())
            .sum()
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// Final `‖r‖ / ‖b‖`.
    pub relative_residual: f64,
}

/// Solves `A x = b` starting from the contents of `x`.
///
/// Stops once `‖b − Ax‖ ≤ tol ‖b‖`. Works for positive semidefinite `A` when
/// `b` lies in the range.
pub fn pcg(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = op.dim();
    if b.len() != n || x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "operator of size {n}, rhs {}, guess {}",
            b.len(),
            x.len()
        )));
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats::default());
    }
    let inv_diag: Vec<f64> = op
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= tol * bnorm {
        return Ok(CgStats {
            iterations: 0,
            relative_residual: rnorm / bnorm,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverDivergence {
                iterations: it,
                residual: rnorm / bnorm,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rnorm = dot(&r, &r).sqrt();
        if !rnorm.is_finite() {
            break;
        }
        if rnorm <= tol * bnorm {
            return Ok(CgStats {
                iterations: it,
                relative_residual: rnorm / bnorm,
            });
        }
        z.iter_mut()
            .zip(&r)
            .zip(&inv_diag)
            .for_each(|((zi, ri), di)| *zi = ri * di);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::SolverDivergence {
        iterations: max_iter,
        residual: rnorm / bnorm,
    })
}

/// Removes the `mass`-weighted mean: `v ← v − (Σ m v / Σ m) 1`.
pub fn remove_weighted_mean(v: &mut [f64], mass: &[f64]) {
    let total: f64 = mass.iter().sum();
    let mean = dot(v, mass) / total;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Smallest eigenvalue of `K v = μ diag(m) v` by inverse iteration.
///
/// With `project_constants` the constant mode is excluded, giving the first
/// nonzero eigenvalue of a Neumann or periodic problem. Returns `μ` and an
/// eigenvector normalized by `Σ m v² = 1`.
pub fn smallest_eigenpair(
    stiffness: &dyn LinearOperator,
    mass: &[f64],
    project_constants: bool,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, Vec<f64>)> {
    let n = stiffness.dim();
    // smooth-ish deterministic start, orthogonal to constants after projection
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            (std::f64::consts::TAU * x).sin() + 0.3 * (7.0 * x).cos() + 0.1
        })
        .collect();
    let normalize = |v: &mut [f64]| {
        let s: f64 = v.iter().zip(mass).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= s);
    };
    if project_constants {
        remove_weighted_mean(&mut v, mass);
    }
    normalize(&mut v);
    let mut kv = vec![0.0; n];
    let mut mu_old = f64::INFINITY;
    let mut x = vec![0.0; n];
    for _ in 0..max_iter {
        let rhs: Vec<f64> = v.iter().zip(mass).map(|(a, m)| a * m).collect();
        pcg(stiffness, &rhs, &mut x, 1e-12, 20 * n + 1000)?;
        v.copy_from_slice(&x);
        if project_constants {
            remove_weighted_mean(&mut v, mass);
        }
        normalize(&mut v);
        stiffness.apply(&v, &mut kv);
        let mu = dot(&v, &kv);
        if (mu - mu_old).abs() <= tol * mu.abs() {
            return Ok((mu, v));
        }
        mu_old = mu;
    }
    Err(Error::SolverDivergence {
        iterations: max_iter,
        residual: f64::NAN,
    })
}
