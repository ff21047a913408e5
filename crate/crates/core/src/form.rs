//! Discrete Dirichlet form, generator, ball restrictions and ball norms.
//!
//! The form lives on faces: the face between site `i` and its forward
//! neighbor along `axis` carries the conductance
//! `c = h^{d-2} · e·(a_i + a_j)/2·e`, and `E(u,u) = Σ_faces c (u_i − u_j)²`.
//! The speed measure gives every site the mass `m_i = Λ_i h^d`.

use rayon::prelude::*;

use crate::env::FieldSample;
use crate::grid::{ball_volume, TorusGrid};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct FormMatrix {
    pub grid: TorusGrid,
    /// Face conductances indexed by `site * d + axis` (face to the forward neighbor).
    pub conductance: Vec<f64>,
    /// Stiffness matrix of `E` (symmetric, zero row sums).
    pub stiffness: CsrMatrix,
    /// Site masses `Λ_i h^d`.
    pub mass: Vec<f64>,
    /// Speed density `Λ_i`.
    pub speed: Vec<f64>,
    /// Frobenius norm of the off-diagonal part of `a` left out of the stencil.
    pub discarded_offdiagonal: f64,
}

fn stiffness_from_conductance(grid: &TorusGrid, conductance: &[f64]) -> CsrMatrix {
    let d = grid.d;
    let n = grid.num_sites();
    let mut t = Vec::with_capacity(n * (2 * d + 1) * 2);
    for i in 0..n {
        for axis in 0..d {
            let j = grid.neighbor(i, axis, true);
            let c = conductance[i * d + axis];
            t.extend([(i, i, c), (j, j, c), (i, j, -c), (j, i, -c)]);
        }
    }
    CsrMatrix::from_triplets(n, t)
}

/// Assembles the two-point flux form of `sample` on `grid`.
pub fn assemble_form(sample: &FieldSample, grid: &TorusGrid) -> Result<FormMatrix> {
    if sample.grid != *grid {
        return Err(Error::DimensionMismatch(format!(
            "sample lives on {:?}, form requested on {:?}",
            sample.grid, grid
        )));
    }
    let d = grid.d;
    let hd2 = grid.h.powi(d as i32 - 2);
    let conductance: Vec<f64> = (0..grid.num_sites() * d)
        .into_par_iter()
        .map(|k| {
            let (i, axis) = (k / d, k % d);
            let j = grid.neighbor(i, axis, true);
            let e = axis * d + axis;
            hd2 * 0.5 * (sample.a(i)[e] + sample.a(j)[e])
        })
        .collect();
    let cell = grid.cell_volume();
    Ok(FormMatrix {
        grid: grid.clone(),
        stiffness: stiffness_from_conductance(grid, &conductance),
        conductance,
        mass: sample.upper.iter().map(|l| l * cell).collect(),
        speed: sample.upper.clone(),
        discarded_offdiagonal: sample.offdiagonal_frobenius(),
    })
}

impl FormMatrix {
    pub fn num_sites(&self) -> usize {
        self.mass.len()
    }

    /// Faces as `(i, j, c)` with `j` the forward neighbor of `i`.
    pub fn faces(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let d = self.grid.d;
        self.conductance
            .iter()
            .enumerate()
            .map(move |(k, &c)| (k / d, self.grid.neighbor(k / d, k % d, true), c))
    }

    /// `E(u, v)`.
    pub fn energy_between(&self, u: &[f64], v: &[f64]) -> f64 {
        crate::stats::ordered_sum(self.faces().map(|(i, j, c)| c * (u[i] - u[j]) * (v[i] - v[j])))
    }

    /// `E(u, u)`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.energy_between(u, u)
    }

    /// `⟨u, v⟩_m`.
    pub fn inner_m(&self, u: &[f64], v: &[f64]) -> f64 {
        crate::stats::ordered_sum(u.iter().zip(v).zip(&self.mass).map(|((a, b), m)| a * b * m))
    }

    pub fn total_mass(&self) -> f64 {
        crate::stats::ordered_sum(self.mass.iter().copied())
    }

    /// `L u = −M^{-1} E u`.
    pub fn apply_generator(&self, u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; u.len()];
        self.stiffness.matvec(u, &mut y);
        y.iter_mut().zip(&self.mass).for_each(|(v, m)| *v = -*v / m);
        y
    }

    /// Copy with every conductance multiplied by `c`.
    pub fn scaled(&self, c: f64) -> FormMatrix {
        let conductance: Vec<f64> = self.conductance.iter().map(|v| v * c).collect();
        FormMatrix {
            stiffness: stiffness_from_conductance(&self.grid, &conductance),
            conductance,
            ..self.clone()
        }
    }

    /// Largest face conductance divided by the smallest mass; bounds the
    /// spectral radius of the generator up to a factor `4d`.
    pub fn stiffness_ratio(&self) -> f64 {
        let cmax = self.conductance.iter().copied().fold(0.0, f64::max);
        let mmin = self.mass.iter().copied().fold(f64::INFINITY, f64::min);
        cmax / mmin
    }
}

/// Closed torus-metric ball as a sorted list of sites.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: usize,
    pub radius: f64,
    pub sites: Vec<usize>,
}

impl Ball {
    pub fn new(grid: &TorusGrid, center: usize, radius: f64) -> Result<Self> {
        let sites = grid.ball_sites(center, radius);
        if sites.is_empty() || center >= grid.num_sites() {
            return Err(Error::EmptyBall { center, radius });
        }
        Ok(Self {
            center,
            radius,
            sites,
        })
    }

    /// Analytic volume `|B|`.
    pub fn volume(&self, d: usize) -> f64 {
        ball_volume(d, self.radius)
    }

    /// Membership mask over all torus sites.
    pub fn mask(&self, num_sites: usize) -> Vec<bool> {
        let mut m = vec![false; num_sites];
        for &s in &self.sites {
            m[s] = true;
        }
        m
    }
}

/// `‖u‖_{r,B,θ} = (1/|B| ∫_B |u|^r θ)^{1/r}` with the discrete volume as `|B|`.
///
/// `values` and `theta` are indexed by torus site; `r = ∞` gives `max_B |u|`.
pub fn ball_norm(values: &[f64], ball: &Ball, r: f64, theta: Option<&[f64]>) -> Result<f64> {
    if ball.sites.is_empty() {
        return Err(Error::EmptyBall {
            center: ball.center,
            radius: ball.radius,
        });
    }
    if !(r >= 1.0) {
        return Err(Error::InvalidArgument(format!("norm exponent must be ≥ 1 (got {r})")));
    }
    if r.is_infinite() {
        return Ok(ball.sites.iter().map(|&s| values[s].abs()).fold(0.0, f64::max));
    }
    let w = |s: usize| theta.map_or(1.0, |t| t[s]);
    let sum = crate::stats::ordered_sum(ball.sites.iter().map(|&s| values[s].abs().powf(r) * w(s)));
    Ok((sum / ball.sites.len() as f64).powf(1.0 / r))
}

/// Form on a ball with the exterior killed, plus the Neumann form on the same sites.
#[derive(Clone, Debug)]
pub struct BallRestriction {
    pub ball: Ball,
    /// Torus site to local index, `usize::MAX` outside.
    pub local: Vec<usize>,
    /// Killed form on interior sites; faces to the exterior stay on the diagonal.
    pub stiffness: CsrMatrix,
    /// Form using only faces with both ends inside the ball.
    pub neumann: CsrMatrix,
    pub mass: Vec<f64>,
    pub speed: Vec<f64>,
}

impl BallRestriction {
    pub fn len(&self) -> usize {
        self.ball.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ball.sites.is_empty()
    }

    /// Local values of a torus site array.
    pub fn gather(&self, global: &[f64]) -> Vec<f64> {
        self.ball.sites.iter().map(|&s| global[s]).collect()
    }

    /// Torus site array that vanishes outside the ball.
    pub fn scatter(&self, local: &[f64], num_sites: usize) -> Vec<f64> {
        let mut g = vec![0.0; num_sites];
        for (k, &s) in self.ball.sites.iter().enumerate() {
            g[s] = local[k];
        }
        g
    }

    fn quad(m: &CsrMatrix, u: &[f64]) -> f64 {
        let mut y = vec![0.0; u.len()];
        m.matvec(u, &mut y);
        crate::sparse::dot(u, &y)
    }

    /// Killed energy of a local array.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        Self::quad(&self.stiffness, u)
    }

    /// Energy from faces inside the ball only.
    pub fn neumann_energy(&self, u: &[f64]) -> f64 {
        Self::quad(&self.neumann, u)
    }
}

/// Restricts the form to `B(center, radius)` with zero exterior values.
pub fn restrict_dirichlet(form: &FormMatrix, center: usize, radius: f64) -> Result<BallRestriction> {
    let grid = &form.grid;
    if radius < 2.0 * grid.h * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "ball radius {radius} below 2h = {}",
            2.0 * grid.h
        )));
    }
    let ball = Ball::new(grid, center, radius)?;
    let n = grid.num_sites();
    if ball.sites.len() >= n {
        return Err(Error::InvalidArgument(
            "ball covers the whole torus; nothing to kill".into(),
        ));
    }
    let mut local = vec![usize::MAX; n];
    for (k, &s) in ball.sites.iter().enumerate() {
        local[s] = k;
    }
    let mut killed = Vec::new();
    let mut neumann = Vec::new();
    for (i, j, c) in form.faces() {
        let (li, lj) = (local[i], local[j]);
        match (li != usize::MAX, lj != usize::MAX) {
            (true, true) => {
                let t = [(li, li, c), (lj, lj, c), (li, lj, -c), (lj, li, -c)];
                killed.extend(t);
                neumann.extend(t);
            }
            (true, false) => killed.push((li, li, c)),
            (false, true) => killed.push((lj, lj, c)),
            (false, false) => {}
        }
    }
    let m = ball.sites.len();
    // keep every diagonal present so isolated sites still have a row
    for k in 0..m {
        neumann.push((k, k, 0.0));
    }
    Ok(BallRestriction {
        mass: ball.sites.iter().map(|&s| form.mass[s]).collect(),
        speed: ball.sites.iter().map(|&s| form.speed[s]).collect(),
        stiffness: CsrMatrix::from_triplets(m, killed),
        neumann: CsrMatrix::from_triplets(m, neumann),
        local,
        ball,
    })
}

/// `E_η(u,u) = Σ_faces c (η_i² + η_j²)/2 (u_i − u_j)²`.
pub fn cutoff_energy(form: &FormMatrix, u: &[f64], eta: &[f64]) -> Result<f64> {
    if let Some(bad) = eta.iter().find(|&&e| !(0.0..=1.0).contains(&e)) {
        return Err(Error::InvalidArgument(format!("cutoff value {bad} outside [0, 1]")));
    }
    Ok(crate::stats::ordered_sum(form.faces().map(|(i, j, c)| {
        0.5 * (eta[i] * eta[i] + eta[j] * eta[j]) * c * (u[i] - u[j]).powi(2)
    })))
}

/// Canonical radial cutoff `η(z) = (1 − |x − z|/r)_+`.
pub fn radial_cutoff(grid: &TorusGrid, center: usize, radius: f64) -> Vec<f64> {
    (0..grid.num_sites())
        .map(|z| (1.0 - grid.distance(center, z) / radius).max(0.0))
        .collect()
}

/// Discrete Lipschitz constant: largest face difference over `h`.
pub fn gradient_sup(grid: &TorusGrid, eta: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..grid.num_sites() {
        for axis in 0..grid.d {
            let j = grid.neighbor(i, axis, true);
            best = best.max((eta[i] - eta[j]).abs());
        }
    }
    best / grid.h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_environment, EnvironmentSpec, Model};

    fn form(model: Model, n: usize) -> FormMatrix {
        let s = generate_environment(&EnvironmentSpec::new(2, n, model, 4)).unwrap();
        assemble_form(&s, &s.grid).unwrap()
    }

    #[test]
    fn indicator_energy_counts_neighbors() {
        let f = form(Model::Constant, 8);
        let mut u = vec![0.0; 64];
        u[9] = 1.0;
        assert_eq!(f.energy(&u), 4.0);
        assert_eq!(f.energy(&vec![1.0; 64]), 0.0);
    }

    #[test]
    fn stiffness_matches_face_sum() {
        let f = form(Model::IidCellPareto, 8);
        let u: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let mut y = vec![0.0; 64];
        f.stiffness.matvec(&u, &mut y);
        let q = crate::sparse::dot(&u, &y);
        assert!((q - f.energy(&u)).abs() < 1e-10 * q);
        assert!(f.stiffness.is_symmetric(1e-14));
        for i in 0..64 {
            assert!(f.stiffness.row(i).map(|(_, v)| v).sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn ball_norm_of_constant() {
        let g = TorusGrid::new(2, 16, 0.5).unwrap();
        let b = Ball::new(&g, g.center_site(), 2.0).unwrap();
        let u = vec![3.0; 256];
        for r in [1.0, 2.0, 7.5, f64::INFINITY] {
            assert!((ball_norm(&u, &b, r, None).unwrap() - 3.0).abs() < 1e-12);
        }
        assert!(ball_norm(&u, &b, 0.5, None).is_err());
    }

    #[test]
    fn restriction_agrees_on_interior_functions() {
        let f = form(Model::Lognormal { sigma: 1.0, correlation_length: 2.0 }, 16);
        let r = restrict_dirichlet(&f, f.grid.center_site(), 4.0).unwrap();
        let local: Vec<f64> = (0..r.len()).map(|k| (k as f64 * 0.37).sin()).collect();
        let global = r.scatter(&local, f.num_sites());
        let a = f.energy(&global);
        let b = r.dirichlet_energy(&local);
        assert!((a - b).abs() < 1e-12 * a);
        assert!(restrict_dirichlet(&f, 0, 1.0).is_err());
        assert!(restrict_dirichlet(&f, 0, 100.0).is_err());
    }

    #[test]
    fn cutoff_energy_limits() {
        let f = form(Model::IidCellPareto, 8);
        let u: Vec<f64> = (0..64).map(|i| (i as f64).cos()).collect();
        let e = f.energy(&u);
        assert!((cutoff_energy(&f, &u, &vec![1.0; 64]).unwrap() - e).abs() < 1e-12 * e);
        assert_eq!(cutoff_energy(&f, &u, &vec![0.0; 64]).unwrap(), 0.0);
        assert!(cutoff_energy(&f, &u, &vec![1.5; 64]).is_err());
    }

    #[test]
    fn radial_cutoff_gradient_is_inverse_radius() {
        let g = TorusGrid::new(2, 64, 0.25).unwrap();
        let r = 4.0;
        let eta = radial_cutoff(&g, g.center_site(), r);
        let lip = gradient_sup(&g, &eta);
        assert!(lip <= 1.0 / r + 1e-12);
        assert!(lip >= 1.0 / r - g.h / (r * r) - 1e-12);
    }
}
