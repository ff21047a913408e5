//! Positive caloric functions: global torus solutions stored on a window of
//! sites at every time step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cylinder::ParabolicCylinder;
use crate::env::gaussian_field;
use crate::form::FormMatrix;
use crate::heat::{kernel_columns, uniform_steps, HeatOptions, Propagator, SchemeRecord};
use crate::{Error, Result};

/// More implicit Euler fallbacks caused by one solution than this abort the run.
pub const MAX_FALLBACKS: usize = 10;

/// A solution `u(t, ·)` sampled at `times`, stored on `sites`.
#[derive(Clone, Debug)]
pub struct Solution {
    pub times: Vec<f64>,
    /// Stored sites, ascending.
    pub sites: Vec<usize>,
    /// `values[k][l]` is `u(times[k], sites[l])`.
    pub values: Vec<Vec<f64>>,
    pub scheme: SchemeRecord,
    local: Vec<usize>,
}

/// Where one cylinder sits inside a stored solution.
#[derive(Clone, Debug)]
pub struct CylinderView {
    pub time_indices: Vec<usize>,
    /// Local indices of the cylinder sites.
    pub local: Vec<usize>,
    pub sites: Vec<usize>,
}

impl Solution {
    /// `sites = None` stores the whole torus of `num_sites` sites.
    pub fn new(
        times: Vec<f64>,
        sites: Option<Vec<usize>>,
        values: Vec<Vec<f64>>,
        num_sites: usize,
        scheme: SchemeRecord,
    ) -> Result<Self> {
        let mut sites = sites.unwrap_or_else(|| (0..num_sites).collect());
        sites.sort_unstable();
        sites.dedup();
        if times.len() != values.len() || values.iter().any(|v| v.len() != sites.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} times, {} snapshots, {} stored sites",
                times.len(),
                values.len(),
                sites.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("solution times must be strictly ascending".into()));
        }
        let mut local = vec![usize::MAX; num_sites];
        for (l, &s) in sites.iter().enumerate() {
            if s >= num_sites {
                return Err(Error::InvalidArgument(format!("site {s} outside the torus")));
            }
            local[s] = l;
        }
        Ok(Self {
            times,
            sites,
            values,
            scheme,
            local,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.local.len()
    }

    pub fn value(&self, k: usize, site: usize) -> Option<f64> {
        self.local
            .get(site)
            .filter(|&&l| l != usize::MAX)
            .map(|&l| self.values[k][l])
    }

    /// `c·u`, still caloric.
    pub fn scaled(&self, c: f64) -> Solution {
        Solution {
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| x * c).collect())
                .collect(),
            ..self.clone()
        }
    }

    /// Locates `cyl`; errors when its ball is not stored or no sample time
    /// falls in its window.
    pub fn view(&self, cyl: &ParabolicCylinder) -> Result<CylinderView> {
        let mut local = Vec::with_capacity(cyl.sites.len());
        for &s in &cyl.sites {
            match self.local.get(s) {
                Some(&l) if l != usize::MAX => local.push(l),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "{:?} cylinder site {s} is outside the stored window",
                        cyl.kind
                    )))
                }
            }
        }
        let time_indices = cyl.time_indices(&self.times);
        if time_indices.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no solution time in the {:?} window [{}, {}]",
                cyl.kind, cyl.t_start, cyl.t_end
            )));
        }
        if cyl.t_start < self.times[0] - 1e-9 * cyl.duration().max(1.0)
            || cyl.t_end > self.times[self.times.len() - 1] + 1e-9 * cyl.duration().max(1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "{:?} window [{}, {}] exceeds the solution range [{}, {}]",
                cyl.kind,
                cyl.t_start,
                cyl.t_end,
                self.times[0],
                self.times[self.times.len() - 1]
            )));
        }
        Ok(CylinderView {
            time_indices,
            local,
            sites: cyl.sites.clone(),
        })
    }

    /// Every stored value of `u` on `cyl`.
    pub fn cylinder_values(&self, cyl: &ParabolicCylinder) -> Result<Vec<f64>> {
        let v = self.view(cyl)?;
        Ok(v.time_indices
            .iter()
            .flat_map(|&k| v.local.iter().map(move |&l| self.values[k][l]))
            .collect())
    }
}

/// Initial data of a caloric run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CaloricSource {
    Constant { value: f64 },
    /// `u₀ = exp(a·G)` with `G` a unit-variance Gaussian field of correlation length `ℓ`.
    LogGaussian { amplitude: f64, correlation_length: f64 },
    /// `u(t, ·) = p_{t₀ + t}(o, ·)`.
    ShiftedKernel { origin: usize, t0: f64 },
}

impl CaloricSource {
    fn initial(&self, form: &FormMatrix, seed: u64, opts: &HeatOptions) -> Result<Vec<f64>> {
        let n = form.num_sites();
        match *self {
            CaloricSource::Constant { value } => {
                if !(value > 0.0) {
                    return Err(Error::InvalidArgument(format!("constant {value} is not positive")));
                }
                Ok(vec![value; n])
            }
            CaloricSource::LogGaussian {
                amplitude,
                correlation_length,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = gaussian_field(&form.grid, correlation_length, &mut rng);
                Ok(g.into_iter().map(|v| (amplitude * v).exp()).collect())
            }
            CaloricSource::ShiftedKernel { origin, t0 } => {
                if !(t0 > 0.0) {
                    return Err(Error::InvalidArgument(format!("kernel shift t₀ = {t0} must be positive")));
                }
                Ok(kernel_columns(form, &[origin], t0, opts)?.0.pop().unwrap().values)
            }
        }
    }
}

/// Evolves several nonnegative, nonzero initial data on `[0, horizon]`,
/// storing `window` (all sites when `None`) at every step. The batch shares step decisions;
/// more than [`MAX_FALLBACKS`] guard triggers by any one solution abort the run.
pub fn evolve_window(
    form: &FormMatrix,
    initial: Vec<Vec<f64>>,
    horizon: f64,
    window: Option<&[usize]>,
    opts: &HeatOptions,
) -> Result<Vec<Solution>> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive (got {horizon})")));
    }
    let n = form.num_sites();
    if let Some(bad) = initial.iter().find(|u| u.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "initial data has {} values, torus has {n} sites",
            bad.len()
        )));
    }
    if let Some(pos) = initial
        .iter()
        .position(|u| u.iter().any(|&v| !(v >= 0.0)) || !u.iter().any(|&v| v > 0.0))
    {
        return Err(Error::Positivity(format!("initial datum {pos} is not positive")));
    }
    let mut sites: Vec<usize> = window.map(|w| w.to_vec()).unwrap_or_else(|| (0..n).collect());
    sites.sort_unstable();
    sites.dedup();
    let steps = uniform_steps(horizon, opts.step_for(form.grid.h, horizon));
    let dt = horizon / steps as f64;
    let prop = Propagator::torus(form, opts.clone());
    let mut record = SchemeRecord {
        tolerance: opts.tolerance,
        ..SchemeRecord::default()
    };
    let gather = |u: &[f64]| -> Vec<f64> { sites.iter().map(|&s| u[s]).collect() };
    let mut stored: Vec<Vec<Vec<f64>>> = initial.iter().map(|u| vec![gather(u)]).collect();
    let mut cols = initial;
    let mut triggers = vec![0usize; cols.len()];
    for _ in 0..steps {
        let (_, tripped) = prop.step_batch_flagged(&mut cols, dt, None, &mut record)?;
        for (k, (c, t)) in triggers.iter_mut().zip(tripped).enumerate() {
            *c += t as usize;
            if *c > MAX_FALLBACKS {
                return Err(Error::Positivity(format!(
                    "positivity guard triggered {c} times for solution {k} (limit {MAX_FALLBACKS}) with Δt = {dt}"
                )));
            }
        }
        for (st, c) in stored.iter_mut().zip(&cols) {
            st.push(gather(c));
        }
    }
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    stored
        .into_iter()
        .map(|values| Solution::new(times.clone(), Some(sites.clone()), values, n, record.clone()))
        .collect()
}

/// Caloric solutions from several sources; seeds feed the random sources.
pub fn make_caloric_batch(
    form: &FormMatrix,
    sources: &[(CaloricSource, u64)],
    horizon: f64,
    window: Option<&[usize]>,
    opts: &HeatOptions,
) -> Result<Vec<Solution>> {
    let mut initial: Vec<Option<Vec<f64>>> = vec![None; sources.len()];
    // shifted kernels with a common t₀ are evolved as one batch
    let mut shifts: Vec<f64> = sources
        .iter()
        .filter_map(|(src, _)| match *src {
            CaloricSource::ShiftedKernel { t0, .. } if t0 > 0.0 => Some(t0),
            _ => None,
        })
        .collect();
    shifts.sort_by(f64::total_cmp);
    shifts.dedup();
    for t0 in shifts {
        let members: Vec<(usize, usize)> = sources
            .iter()
            .enumerate()
            .filter_map(|(k, (src, _))| match *src {
                CaloricSource::ShiftedKernel { origin, t0: s } if s == t0 => Some((k, origin)),
                _ => None,
            })
            .collect();
        let origins: Vec<usize> = members.iter().map(|m| m.1).collect();
        let (cols, _) = kernel_columns(form, &origins, t0, opts)?;
        for ((k, _), col) in members.into_iter().zip(cols) {
            initial[k] = Some(col.values);
        }
    }
    let initial = sources
        .iter()
        .zip(initial)
        .map(|((src, seed), pre)| match pre {
            Some(v) => Ok(v),
            None => src.initial(form, *seed, opts),
        })
        .collect::<Result<Vec<_>>>()?;
    evolve_window(form, initial, horizon, window, opts)
}

/// `u₀ = exp(G)` with `G` a smoothed Gaussian field (correlation length `4h`),
/// evolved on the whole torus up to `horizon`.
pub fn make_caloric(form: &FormMatrix, horizon: f64, seed: u64) -> Result<Solution> {
    let src = CaloricSource::LogGaussian {
        amplitude: 1.0,
        correlation_length: 4.0 * form.grid.h,
    };
    Ok(make_caloric_batch(form, &[(src, seed)], horizon, None, &HeatOptions::default())?
        .pop()
        .unwrap())
}

/// Sites `x + (r/2)ξ_k` with `ξ_k` uniform in the unit ball, drawn from `seed`.
/// The `ξ_k` do not depend on `r`, so rescaling `r` keeps relative positions.
pub fn origins_in_half_ball(form: &FormMatrix, x: usize, r: f64, count: usize, seed: u64) -> Vec<usize> {
    let grid = &form.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let xi: Vec<f64> = (0..grid.d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        if xi.iter().map(|v| v * v).sum::<f64>() > 1.0 {
            continue;
        }
        let offset: Vec<i64> = xi.iter().map(|v| (0.5 * r * v / grid.h).round() as i64).collect();
        out.push(grid.shift(x, &offset));
    }
    out
}
