//! The semigroup `P_t` generated by `(1/Λ)∇·(a∇)`: time stepping, heat-kernel
//! columns and semigroup audits.
//!
//! Each step solves `(M + θΔt E) u_{n+1} = (M − (1−θ)Δt E) u_n` with
//! Crank–Nicolson (`θ = 1/2`). For nonnegative data a step whose result dips
//! below `−1e-12 · max u` is redone with implicit Euler (`θ = 1`), which keeps
//! the M-matrix stencil positivity preserving. Both step operators are
//! rational functions of the same self-adjoint operator, so they commute.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::form::{BallRestriction, FormMatrix};
use crate::grid::TorusGrid;
use crate::sparse::{pcg, CsrMatrix, ShiftedOperator};
use crate::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
const GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatOptions {
    /// Largest step; `None` means `min(h², t/64)`.
    pub dt: Option<f64>,
    /// Relative residual tolerance of every linear solve.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Positivity guard (Crank–Nicolson falls back to implicit Euler).
    pub guard: bool,
}

impl Default for HeatOptions {
    fn default() -> Self {
        Self {
            dt: None,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: 20_000,
            guard: true,
        }
    }
}

impl HeatOptions {
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    /// Step size used to reach time `t` on a grid of spacing `h`.
    pub fn step_for(&self, h: f64, t: f64) -> f64 {
        self.dt.unwrap_or_else(|| (h * h).min(t / 64.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    CrankNicolson,
    ImplicitEuler,
}

impl StepKind {
    fn theta(self) -> f64 {
        match self {
            StepKind::CrankNicolson => 0.5,
            StepKind::ImplicitEuler => 1.0,
        }
    }
}

/// What the time stepper did.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemeRecord {
    /// Largest step actually taken.
    pub dt: f64,
    pub steps: usize,
    /// Steps redone with implicit Euler.
    pub fallbacks: usize,
    /// Sites set to zero after an implicit Euler step left solver-noise negatives.
    pub clamps: usize,
    pub tolerance: f64,
    pub max_relative_residual: f64,
    pub cg_iterations: usize,
    #[serde(skip)]
    pub decisions: Vec<StepKind>,
}

impl SchemeRecord {
    fn new(tol: f64) -> Self {
        Self {
            tolerance: tol,
            ..Self::default()
        }
    }

    pub fn merge(&mut self, other: &SchemeRecord) {
        self.dt = self.dt.max(other.dt);
        self.steps += other.steps;
        self.fallbacks += other.fallbacks;
        self.clamps += other.clamps;
        self.tolerance = self.tolerance.max(other.tolerance);
        self.max_relative_residual = self.max_relative_residual.max(other.max_relative_residual);
        self.cg_iterations += other.cg_iterations;
        self.decisions.extend_from_slice(&other.decisions);
    }
}

#[derive(Clone, Debug)]
pub struct HeatState {
    pub t: f64,
    pub values: Vec<f64>,
    pub scheme: SchemeRecord,
}

/// `p_t(o, ·)` as a density against `m_i = Λ_i h^d`.
#[derive(Clone, Debug)]
pub struct KernelColumn {
    pub origin: usize,
    pub t: f64,
    pub values: Vec<f64>,
}

/// Time stepper for one `(E, M)` pair: the full torus or a killed ball.
pub struct Propagator<'a> {
    stiffness: &'a CsrMatrix,
    mass: &'a [f64],
    conservative: bool,
    pub options: HeatOptions,
}

impl<'a> Propagator<'a> {
    pub fn torus(form: &'a FormMatrix, options: HeatOptions) -> Self {
        Self {
            stiffness: &form.stiffness,
            mass: &form.mass,
            conservative: true,
            options,
        }
    }

    pub fn killed(ball: &'a BallRestriction, options: HeatOptions) -> Self {
        Self {
            stiffness: &ball.stiffness,
            mass: &ball.mass,
            conservative: false,
            options,
        }
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    fn mass_of(&self, u: &[f64]) -> f64 {
        crate::sparse::dot(u, self.mass)
    }

    /// One θ-step of a single column; `u` is overwritten.
    fn theta_step(&self, u: &[f64], out: &mut [f64], dt: f64, kind: StepKind) -> Result<(usize, f64)> {
        let theta = kind.theta();
        let mut rhs = vec![0.0; u.len()];
        let explicit = (1.0 - theta) * dt;
        if explicit != 0.0 {
            self.stiffness.matvec(u, &mut rhs);
            rhs.iter_mut()
                .zip(u)
                .zip(self.mass)
                .for_each(|((r, ui), m)| *r = m * ui - explicit * *r);
        } else {
            rhs.iter_mut()
                .zip(u)
                .zip(self.mass)
                .for_each(|((r, ui), m)| *r = m * ui);
        }
        let op = ShiftedOperator {
            mass: self.mass,
            stiffness: self.stiffness,
            scale: theta * dt,
        };
        out.copy_from_slice(u);
        let stats = pcg(
            &op,
            &rhs,
            out,
            self.options.tolerance,
            self.options.max_iterations,
        )?;
        if self.conservative {
            // E annihilates constants, so a constant shift fixes the mass exactly
            let target = self.mass_of(u);
            let total: f64 = self.mass.iter().sum();
            let shift = (target - self.mass_of(out)) / total;
            out.iter_mut().for_each(|v| *v += shift);
        }
        Ok((stats.iterations, stats.relative_residual))
    }

    /// Advances every column by `dt`. With `forced = None` the guard decides the
    /// step kind, shared by the whole batch; otherwise `forced` is used.
    pub fn step_batch(
        &self,
        columns: &mut [Vec<f64>],
        dt: f64,
        forced: Option<StepKind>,
        record: &mut SchemeRecord,
    ) -> Result<StepKind> {
        Ok(self.step_batch_flagged(columns, dt, forced, record)?.0)
    }

    /// As [`Propagator::step_batch`], also returning which columns tripped the guard.
    pub fn step_batch_flagged(
        &self,
        columns: &mut [Vec<f64>],
        dt: f64,
        forced: Option<StepKind>,
        record: &mut SchemeRecord,
    ) -> Result<(StepKind, Vec<bool>)> {
        let first = forced.unwrap_or(StepKind::CrankNicolson);
        let nonneg: Vec<bool> = columns
            .iter()
            .map(|c| c.iter().all(|&v| v >= 0.0))
            .collect();
        let attempt = |kind: StepKind| -> Result<Vec<(Vec<f64>, usize, f64)>> {
            columns
                .par_iter()
                .map(|u| {
                    let mut out = vec![0.0; u.len()];
                    let (it, res) = self.theta_step(u, &mut out, dt, kind)?;
                    Ok((out, it, res))
                })
                .collect()
        };
        let mut kind = first;
        let mut results = attempt(kind)?;
        let mut tripped = vec![false; columns.len()];
        if forced.is_none() && self.options.guard && kind == StepKind::CrankNicolson {
            for (t, ((v, _, _), &pos)) in tripped.iter_mut().zip(results.iter().zip(&nonneg)) {
                let max = v.iter().copied().fold(0.0, f64::max);
                *t = pos && v.iter().any(|&x| x < -GUARD * max);
            }
            if tripped.iter().any(|&t| t) {
                record.fallbacks += 1;
                kind = StepKind::ImplicitEuler;
                let rejected: usize = results.iter().map(|r| r.1).sum();
                record.cg_iterations += rejected;
                results = attempt(kind)?;
            }
        }
        for ((col, (out, it, res)), &pos) in columns.iter_mut().zip(results).zip(&nonneg) {
            *col = out;
            record.cg_iterations += it;
            record.max_relative_residual = record.max_relative_residual.max(res);
            if pos && self.options.guard && col.iter().any(|&v| v < 0.0) {
                let before = self.mass_of(col);
                let mut clamped = 0;
                for v in col.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                        clamped += 1;
                    }
                }
                record.clamps += clamped;
                if self.conservative {
                    let after = self.mass_of(col);
                    if after > 0.0 {
                        let s = before / after;
                        col.iter_mut().for_each(|v| *v *= s);
                    }
                }
            }
        }
        record.steps += 1;
        record.dt = record.dt.max(dt);
        record.decisions.push(kind);
        Ok((kind, tripped))
    }

    /// Advances by `duration` in `ceil(duration / dt_max)` equal steps.
    /// `replay` forces the step kinds (cycled from its start).
    pub fn advance(
        &self,
        columns: &mut [Vec<f64>],
        duration: f64,
        dt_max: f64,
        replay: Option<&[StepKind]>,
        record: &mut SchemeRecord,
    ) -> Result<()> {
        if duration <= 0.0 {
            return Ok(());
        }
        if !(dt_max > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive (got {dt_max})")));
        }
        let steps = uniform_steps(duration, dt_max);
        let dt = duration / steps as f64;
        for k in 0..steps {
            let forced = replay.map(|r| r[k % r.len()]);
            self.step_batch(columns, dt, forced, record)?;
        }
        Ok(())
    }
}

/// Number of equal steps of size at most `dt_max` covering `duration`.
pub fn uniform_steps(duration: f64, dt_max: f64) -> usize {
    ((duration / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// `u_t = P_t u_0` on the torus.
pub fn evolve(form: &FormMatrix, u0: &[f64], t: f64, dt: Option<f64>) -> Result<HeatState> {
    let opts = HeatOptions {
        dt,
        ..HeatOptions::default()
    };
    evolve_with(form, u0, t, &opts)
}

pub fn evolve_with(form: &FormMatrix, u0: &[f64], t: f64, opts: &HeatOptions) -> Result<HeatState> {
    if u0.len() != form.num_sites() {
        return Err(Error::DimensionMismatch(format!(
            "initial data has {} values, torus has {} sites",
            u0.len(),
            form.num_sites()
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be ≥ 0 (got {t})")));
    }
    let prop = Propagator::torus(form, opts.clone());
    let mut record = SchemeRecord::new(opts.tolerance);
    let mut cols = vec![u0.to_vec()];
    prop.advance(&mut cols, t, opts.step_for(form.grid.h, t), None, &mut record)?;
    Ok(HeatState {
        t,
        values: cols.pop().unwrap(),
        scheme: record,
    })
}

/// Normalized point mass `δ_o / m_o`.
pub fn point_mass(mass: &[f64], o: usize) -> Vec<f64> {
    let mut u = vec![0.0; mass.len()];
    u[o] = 1.0 / mass[o];
    u
}

pub fn kernel_column(form: &FormMatrix, o: usize, t: f64) -> Result<KernelColumn> {
    kernel_column_with(form, o, t, &HeatOptions::default())
}

pub fn kernel_column_with(form: &FormMatrix, o: usize, t: f64, opts: &HeatOptions) -> Result<KernelColumn> {
    Ok(kernel_columns(form, &[o], t, opts)?.0.pop().unwrap())
}

/// Several columns evolved as one batch, so all of them take identical steps.
pub fn kernel_columns(
    form: &FormMatrix,
    origins: &[usize],
    t: f64,
    opts: &HeatOptions,
) -> Result<(Vec<KernelColumn>, SchemeRecord)> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel time must be positive (got {t})")));
    }
    let snaps = kernel_snapshots(form, origins, &[t], opts)?;
    let cols = snaps.values.into_iter().next().unwrap();
    Ok((
        origins
            .iter()
            .zip(cols)
            .map(|(&origin, values)| KernelColumn { origin, t, values })
            .collect(),
        snaps.scheme,
    ))
}

/// Kernel columns recorded at several ascending times.
#[derive(Clone, Debug)]
pub struct KernelSnapshots {
    pub times: Vec<f64>,
    pub origins: Vec<usize>,
    /// `values[k][c]` is `p_{times[k]}(origins[c], ·)`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub scheme: SchemeRecord,
}

/// Evolves point masses at `origins` and records them at each of `times`.
///
/// The segment ending at `t_k` uses steps of at most `min(h², t_k/64)` unless
/// `opts.dt` is set.
pub fn kernel_snapshots(
    form: &FormMatrix,
    origins: &[usize],
    times: &[f64],
    opts: &HeatOptions,
) -> Result<KernelSnapshots> {
    check_times(times)?;
    let n = form.num_sites();
    if let Some(&bad) = origins.iter().find(|&&o| o >= n) {
        return Err(Error::InvalidArgument(format!("origin {bad} outside the torus")));
    }
    let prop = Propagator::torus(form, opts.clone());
    let mut record = SchemeRecord::new(opts.tolerance);
    let mut cols: Vec<Vec<f64>> = origins.iter().map(|&o| point_mass(&form.mass, o)).collect();
    let mut values = Vec::with_capacity(times.len());
    let mut now = 0.0;
    for &t in times {
        prop.advance(&mut cols, t - now, opts.step_for(form.grid.h, t), None, &mut record)?;
        now = t;
        values.push(cols.clone());
    }
    Ok(KernelSnapshots {
        times: times.to_vec(),
        origins: origins.to_vec(),
        values,
        scheme: record,
    })
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || !(times[0] > 0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "times must be positive and strictly ascending".into(),
        ));
    }
    Ok(())
}

/// Kernel of the semigroup killed outside a ball; columns are torus arrays
/// vanishing outside the ball.
pub fn killed_kernel_columns(
    ball: &BallRestriction,
    origins: &[usize],
    t: f64,
    h: f64,
    opts: &HeatOptions,
) -> Result<(Vec<KernelColumn>, SchemeRecord)> {
    let n = ball.local.len();
    let mut cols = Vec::with_capacity(origins.len());
    for &o in origins {
        let l = *ball
            .local
            .get(o)
            .filter(|&&l| l != usize::MAX)
            .ok_or_else(|| Error::InvalidArgument(format!("origin {o} outside the ball")))?;
        cols.push(point_mass(&ball.mass, l));
    }
    let prop = Propagator::killed(ball, opts.clone());
    let mut record = SchemeRecord::new(opts.tolerance);
    prop.advance(&mut cols, t, opts.step_for(h, t), None, &mut record)?;
    Ok((
        origins
            .iter()
            .zip(cols)
            .map(|(&origin, local)| KernelColumn {
                origin,
                t,
                values: ball.scatter(&local, n),
            })
            .collect(),
        record,
    ))
}

/// A solution stored at every time step.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub scheme: SchemeRecord,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Same solution with every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| x * c).collect())
                .collect(),
            scheme: self.scheme.clone(),
        }
    }
}

/// Evolves several initial data on `[t_start, t_end]` with steps of at most
/// `dt`, storing every step. Solutions share step decisions.
pub fn evolve_trajectories(
    form: &FormMatrix,
    initial: Vec<Vec<f64>>,
    t_start: f64,
    t_end: f64,
    opts: &HeatOptions,
) -> Result<Vec<Trajectory>> {
    if !(t_end > t_start) {
        return Err(Error::InvalidArgument("trajectory needs t_end > t_start".into()));
    }
    let dt_max = opts.step_for(form.grid.h, t_end - t_start);
    let steps = uniform_steps(t_end - t_start, dt_max);
    let dt = (t_end - t_start) / steps as f64;
    let prop = Propagator::torus(form, opts.clone());
    let mut record = SchemeRecord::new(opts.tolerance);
    let mut cols = initial;
    let mut out: Vec<Trajectory> = cols
        .iter()
        .map(|c| Trajectory {
            times: vec![t_start],
            values: vec![c.clone()],
            scheme: SchemeRecord::default(),
        })
        .collect();
    for k in 1..=steps {
        prop.step_batch(&mut cols, dt, None, &mut record)?;
        let t = t_start + k as f64 * dt;
        for (tr, c) in out.iter_mut().zip(&cols) {
            tr.times.push(t);
            tr.values.push(c.clone());
        }
    }
    for tr in out.iter_mut() {
        tr.scheme = record.clone();
    }
    Ok(out)
}

pub fn evolve_trajectory(
    form: &FormMatrix,
    u0: &[f64],
    t_start: f64,
    t_end: f64,
    opts: &HeatOptions,
) -> Result<Trajectory> {
    Ok(evolve_trajectories(form, vec![u0.to_vec()], t_start, t_end, opts)?
        .pop()
        .unwrap())
}

/// Relative residual of the discrete weak form between consecutive states:
/// `‖M(u_{n+1} − u_n)/Δt + E(θu_{n+1} + (1−θ)u_n)‖ / ‖M u_n / Δt‖`.
pub fn step_residual(form: &FormMatrix, prev: &[f64], next: &[f64], dt: f64, kind: StepKind) -> f64 {
    let theta = kind.theta();
    let mix: Vec<f64> = prev
        .iter()
        .zip(next)
        .map(|(a, b)| theta * b + (1.0 - theta) * a)
        .collect();
    let mut eu = vec![0.0; mix.len()];
    form.stiffness.matvec(&mix, &mut eu);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..mix.len() {
        let r = form.mass[i] * (next[i] - prev[i]) / dt + eu[i];
        num += r * r;
        den += (form.mass[i] * prev[i] / dt).powi(2);
    }
    (num / den).sqrt()
}

/// Semigroup residual `max_j |p_{t+s}(o,j) − Σ_k p_t(o,k) p_s(k,j) m_k|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChapmanKolmogorov {
    pub residual: f64,
    /// `max_j p_{t+s}(o, j)` over the probes, for relative reporting.
    pub scale: f64,
    pub probes: usize,
    pub dt: f64,
    pub scheme: SchemeRecord,
}

/// Evaluates the Chapman–Kolmogorov identity at a set of probe sites `j`.
///
/// `p_s(k, j)` is read off the column started at `j` through the symmetry
/// `p_s(k,j) = p_s(j,k)`. The origin and probe columns are one batch, and the
/// continuation to `t + s` replays the batch's step kinds, so the two sides
/// apply the same commuting step operators. `t` and `s` must be integer
/// multiples of a common step.
pub fn chapman_kolmogorov_residual(
    form: &FormMatrix,
    o: usize,
    t: f64,
    s: f64,
    opts: &HeatOptions,
) -> Result<ChapmanKolmogorov> {
    if !(t > 0.0 && s > 0.0) {
        return Err(Error::InvalidArgument("t and s must be positive".into()));
    }
    let dt0 = opts.step_for(form.grid.h, t.min(s));
    let (nt, ns, dt) = common_step(t, s, dt0)?;
    let mut probes = probe_sites(&form.grid);
    for j in form.grid.ball_sites(o, 2.0 * form.grid.h) {
        if !probes.contains(&j) {
            probes.push(j);
        }
    }
    let n = form.num_sites();
    let prop = Propagator::torus(form, opts.clone());
    let mut record = SchemeRecord::new(opts.tolerance);
    let mut cols: Vec<Vec<f64>> = std::iter::once(o)
        .chain(probes.iter().copied())
        .map(|k| point_mass(&form.mass, k))
        .collect();
    let mut at_s = None;
    let mut at_t = None;
    for k in 1..=nt.max(ns) {
        prop.step_batch(&mut cols, dt, None, &mut record)?;
        if k == ns {
            at_s = Some(cols[1..].to_vec());
        }
        if k == nt {
            at_t = Some(cols[0].clone());
        }
    }
    let p_s = at_s.unwrap();
    let p_t = at_t.unwrap();
    let replay: Vec<StepKind> = record.decisions[..ns].to_vec();
    let mut cont = vec![p_t.clone()];
    prop.advance(&mut cont, ns as f64 * dt, dt * (1.0 + 1e-9), Some(&replay), &mut record)?;
    let direct = &cont[0];
    let mut residual = 0.0f64;
    let mut scale = 0.0f64;
    for (pj, &j) in p_s.iter().zip(&probes) {
        let composed = crate::stats::ordered_sum((0..n).map(|k| p_t[k] * pj[k] * form.mass[k]));
        residual = residual.max((direct[j] - composed).abs());
        scale = scale.max(direct[j]);
    }
    Ok(ChapmanKolmogorov {
        residual,
        scale,
        probes: probes.len(),
        dt,
        scheme: record,
    })
}

/// Step `dt ≤ dt0` dividing both `t` and `s`.
fn common_step(t: f64, s: f64, dt0: f64) -> Result<(usize, usize, f64)> {
    let base = uniform_steps(t, dt0);
    for mult in 1..=64 {
        let nt = base * mult;
        let dt = t / nt as f64;
        let ns = (s / dt).round();
        if ns >= 1.0 && (ns * dt - s).abs() <= 1e-9 * s {
            return Ok((nt, ns as usize, dt));
        }
    }
    Err(Error::InvalidArgument(format!(
        "no common time step for t = {t} and s = {s}"
    )))
}

/// Deterministic probe set: every site when `N ≤ 32`, otherwise a stratified
/// sublattice of about 64 sites.
pub fn probe_sites(grid: &TorusGrid) -> Vec<usize> {
    if grid.n <= 32 {
        return (0..grid.num_sites()).collect();
    }
    let per_axis = (64f64.powf(1.0 / grid.d as f64).round() as usize).max(1);
    let spacing = grid.n / per_axis;
    let total = per_axis.pow(grid.d as u32);
    (0..total)
        .map(|k| {
            let mut rem = k;
            let coords: Vec<usize> = (0..grid.d)
                .map(|axis| {
                    let c = rem % per_axis;
                    rem /= per_axis;
                    // stagger along the axes so the sample is not one lattice
                    (c * spacing + (axis + 1) * spacing / 3) % grid.n
                })
                .collect();
            grid.index(&coords)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagonalProfile {
    pub times: Vec<f64>,
    /// `max_x p_t(x,x)` over the probes.
    pub sup: Vec<f64>,
    pub probes: Vec<usize>,
    /// `diagonal[k][c] = p_{times[k]}(probe_c, probe_c)`.
    pub diagonal: Vec<Vec<f64>>,
    pub scheme: SchemeRecord,
}

impl DiagonalProfile {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.times.iter().copied().zip(self.sup.iter().copied()).collect()
    }

    /// Whether `t ↦ p_t(x,x)` is nonincreasing at every probe, up to `tol` relative.
    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        self.diagonal.windows(2).all(|w| {
            w[0].iter()
                .zip(&w[1])
                .all(|(a, b)| *b <= *a * (1.0 + tol))
        })
    }
}

pub fn diagonal_profile(form: &FormMatrix, times: &[f64], opts: &HeatOptions) -> Result<DiagonalProfile> {
    let probes = probe_sites(&form.grid);
    let snaps = kernel_snapshots(form, &probes, times, opts)?;
    let diagonal: Vec<Vec<f64>> = snaps
        .values
        .iter()
        .map(|cols| cols.iter().zip(&probes).map(|(c, &x)| c[x]).collect())
        .collect();
    let sup = diagonal
        .iter()
        .map(|d| d.iter().copied().fold(0.0, f64::max))
        .collect();
    Ok(DiagonalProfile {
        times: times.to_vec(),
        sup,
        probes,
        diagonal,
        scheme: snaps.scheme,
    })
}

/// Least-squares slope of `log sup_x p_t(x,x)` against `log t` over `[t_lo, t_hi]`.
pub fn diagonal_slope(profile: &DiagonalProfile, t_lo: f64, t_hi: f64) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = profile
        .pairs()
        .into_iter()
        .filter(|&(t, _)| t >= t_lo && t <= t_hi)
        .map(|(t, p)| (t.ln(), p.ln()))
        .unzip();
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fewer than two profile times in [{t_lo}, {t_hi}]"
        )));
    }
    Ok(crate::stats::linear_fit(&x, &y).1)
}

/// Ratios above `1 + ENVELOPE_TOLERANCE` violate an envelope.
pub const ENVELOPE_TOLERANCE: f64 = 1e-9;

/// Fitted on-diagonal envelope `C t^{−γ} (s + |x − o| + √t)^{2γ−d}` and the
/// bare power law `C' t^{−γ}`.
///
/// `C` is fitted at the largest time, where the envelope behaves like
/// `t^{−d/2}`, and checked at every shorter time. `C'` is fitted at the
/// smallest time and checked at every longer time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OnDiagonalAudit {
    pub gamma: f64,
    /// Reference site `o` of `|x − o|`.
    pub reference: usize,
    /// `s(o, 1)`.
    pub stabilization_radius: f64,
    pub times: Vec<f64>,
    pub constant: f64,
    /// Largest `p_t(x,x) / (C E_x(t))` over the probes, per time.
    pub worst_ratio: Vec<f64>,
    /// `log` of `worst_ratio`, the fit residual per time.
    pub residuals: Vec<f64>,
    pub holds: bool,
    pub power_constant: f64,
    /// `sup_x p_t(x,x) / (C' t^{−γ})` per time.
    pub power_ratio: Vec<f64>,
    pub power_holds: bool,
}

/// `t^{−γ} (s + ρ + √t)^{2γ−d}`.
pub fn diagonal_envelope(t: f64, gamma: f64, d: usize, s: f64, rho: f64) -> f64 {
    t.powf(-gamma) * (s + rho + t.sqrt()).powf(2.0 * gamma - d as f64)
}

pub fn ondiagonal_audit(
    profile: &DiagonalProfile,
    grid: &TorusGrid,
    gamma: f64,
    reference: usize,
    stabilization_radius: f64,
) -> Result<OnDiagonalAudit> {
    if profile.times.is_empty() {
        return Err(Error::InvalidArgument("empty diagonal profile".into()));
    }
    if !(gamma > 0.0) || !(stabilization_radius >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need γ > 0 and s ≥ 0 (got γ = {gamma}, s = {stabilization_radius})"
        )));
    }
    let rho: Vec<f64> = profile.probes.iter().map(|&x| grid.distance(reference, x)).collect();
    let env = |t: f64, c: usize| diagonal_envelope(t, gamma, grid.d, stabilization_radius, rho[c]);
    let t0 = profile.times[0];
    let last = profile.times.len() - 1;
    let t_last = profile.times[last];
    let constant = profile.diagonal[last]
        .iter()
        .enumerate()
        .map(|(c, p)| p / env(t_last, c))
        .fold(0.0, f64::max);
    let worst_ratio: Vec<f64> = profile
        .times
        .iter()
        .zip(&profile.diagonal)
        .map(|(&t, row)| {
            row.iter()
                .enumerate()
                .map(|(c, p)| p / (constant * env(t, c)))
                .fold(0.0, f64::max)
        })
        .collect();
    let power_constant = profile.sup[0] * t0.powf(gamma);
    let power_ratio: Vec<f64> = profile
        .times
        .iter()
        .zip(&profile.sup)
        .map(|(&t, p)| p / (power_constant * t.powf(-gamma)))
        .collect();
    Ok(OnDiagonalAudit {
        gamma,
        reference,
        stabilization_radius,
        times: profile.times.clone(),
        constant,
        residuals: worst_ratio.iter().map(|r| r.ln()).collect(),
        holds: worst_ratio.iter().all(|&r| r <= 1.0 + ENVELOPE_TOLERANCE),
        worst_ratio,
        power_constant,
        power_holds: power_ratio.iter().all(|&r| r <= 1.0 + ENVELOPE_TOLERANCE),
        power_ratio,
    })
}

/// Largest eigenvalue of the prior covariance `Σ_prior = 2·ā/Λ̄`, with `ā`
/// the largest axis mean of the face conductances (in units of `a`) and `Λ̄`
/// the mean speed.
pub fn prior_spread(form: &FormMatrix) -> f64 {
    let d = form.grid.d;
    let scale = form.grid.h.powi(d as i32 - 2);
    let sites = form.num_sites() as f64;
    let axis_mean = (0..d)
        .map(|axis| {
            crate::stats::ordered_sum((0..form.num_sites()).map(|i| form.conductance[i * d + axis])) / (sites * scale)
        })
        .fold(0.0, f64::max);
    let speed = crate::stats::ordered_sum(form.speed.iter().copied()) / sites;
    2.0 * axis_mean / speed
}

/// Torus guard `6·√(t·λ_max(Σ_prior)) ≤ N h / 2`.
pub fn check_torus_guard(form: &FormMatrix, t: f64) -> Result<()> {
    let reach = 6.0 * (t * prior_spread(form)).sqrt();
    let half = 0.5 * form.grid.side();
    if reach > half {
        return Err(Error::TorusGuard(format!(
            "diffusive reach 6√(t·λ_max(Σ_prior)) = {reach:.3} at t = {t} exceeds half the torus side {half}"
        )));
    }
    Ok(())
}

/// CSV with header `site,x0,…,x{d-1},density`; coordinates are lattice indices.
pub fn kernel_csv(column: &KernelColumn, grid: &TorusGrid) -> String {
    let mut s = String::from("site");
    for a in 0..grid.d {
        s.push_str(&format!(",x{a}"));
    }
    s.push_str(",density\n");
    for (i, v) in column.values.iter().enumerate() {
        s.push_str(&i.to_string());
        for c in grid.coords(i) {
            s.push_str(&format!(",{c}"));
        }
        s.push_str(&format!(",{v:.17e}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_environment, EnvironmentSpec, Model};
    use crate::form::assemble_form;

    fn form(model: Model, n: usize, h: f64) -> FormMatrix {
        let s = generate_environment(&EnvironmentSpec::new(2, n, model, 8).with_cell_size(h)).unwrap();
        assemble_form(&s, &s.grid).unwrap()
    }

    #[test]
    fn constants_are_stationary() {
        let f = form(Model::IidCellPareto, 16, 1.0);
        let st = evolve(&f, &vec![1.0; 256], 2.0, None).unwrap();
        assert!(st.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn mass_is_conserved_and_positive() {
        let f = form(Model::IidCellPareto, 16, 1.0);
        let col = kernel_column(&f, 37, 1.5).unwrap();
        let mass = f.inner_m(&col.values, &vec![1.0; 256]);
        assert!((mass - 1.0).abs() < 1e-12, "mass {mass}");
        assert!(col.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sine_mode_decays_at_discrete_rate() {
        let n = 32;
        let h = 1.0 / n as f64;
        let f = form(Model::Constant, n, h);
        let k = std::f64::consts::TAU;
        let u0: Vec<f64> = (0..n * n).map(|i| (k * f.grid.position(i)[0]).sin()).collect();
        let t = 0.01;
        let st = evolve(&f, &u0, t, Some(1e-4)).unwrap();
        let rate = (2.0 - 2.0 * (k * h).cos()) / (h * h);
        let expected = (-rate * t).exp();
        let ratio = crate::sparse::dot(&st.values, &u0) / crate::sparse::dot(&u0, &u0);
        assert!((ratio - expected).abs() < 1e-6, "{ratio} vs {expected}");
        assert!((ratio - (-k * k * t).exp()).abs() < 0.01);
    }

    #[test]
    fn batched_columns_are_symmetric() {
        let f = form(Model::Lognormal { sigma: 1.0, correlation_length: 2.0 }, 16, 1.0);
        let origins = [0usize, 17, 100, 200];
        let (cols, _) = kernel_columns(&f, &origins, 1.0, &HeatOptions::default()).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let d = (cols[a].values[origins[b]] - cols[b].values[origins[a]]).abs();
                assert!(d < 1e-10, "{d}");
            }
        }
    }

    #[test]
    fn chapman_kolmogorov_holds_to_solver_accuracy() {
        let f = form(Model::IidCellPareto, 16, 1.0);
        let ck = chapman_kolmogorov_residual(&f, 40, 0.25, 0.25, &HeatOptions::default()).unwrap();
        assert!(ck.residual <= 1e-9 * ck.scale.max(1.0), "{ck:?}");
        let ck2 = chapman_kolmogorov_residual(&f, 40, 0.5, 0.25, &HeatOptions::default()).unwrap();
        assert!(ck2.residual <= 1e-9 * ck2.scale.max(1.0), "{ck2:?}");
    }

    #[test]
    fn diagonal_profile_decreases() {
        let f = form(Model::IidCellPareto, 16, 1.0);
        let p = diagonal_profile(&f, &[0.5, 1.0, 2.0, 4.0], &HeatOptions::default()).unwrap();
        assert!(p.is_nonincreasing(1e-9));
        assert_eq!(p.probes.len(), 256);
    }

    #[test]
    fn probe_set_is_stratified() {
        let g = TorusGrid::new(2, 64, 1.0).unwrap();
        let p = probe_sites(&g);
        assert_eq!(p.len(), 64);
        let mut q = p.clone();
        q.sort();
        q.dedup();
        assert_eq!(q.len(), 64);
    }

    #[test]
    fn csv_has_one_row_per_site() {
        let f = form(Model::Constant, 4, 1.0);
        let col = kernel_column(&f, 0, 0.5).unwrap();
        let csv = kernel_csv(&col, &f.grid);
        assert_eq!(csv.lines().count(), 17);
        assert!(csv.starts_with("site,x0,x1,density"));
    }
}
