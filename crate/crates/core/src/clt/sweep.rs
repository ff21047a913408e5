//! The local CLT sweep: `ε^{−d} p_{t/ε²}(o, x/ε)` against `a_Λ^{−1} k_t^Σ(x)`.

use serde::{Deserialize, Serialize};

use super::target::CltTarget;
use crate::form::FormMatrix;
use crate::heat::{check_torus_guard, kernel_snapshots, HeatOptions, SchemeRecord};
use crate::serde_ext::ext_f64;
use crate::stats::{isotonic_nonincreasing, ordered_sum};
use crate::{Error, Result};

/// Default compact interval `I`.
pub const DEFAULT_INTERVAL: (f64, f64) = (0.5, 2.0);
/// Default ε ladder.
pub const DEFAULT_EPSILONS: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

/// `count` evenly spaced times in `[a, b]`.
pub fn interval_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![a];
    }
    (0..count)
        .map(|k| a + (b - a) * k as f64 / (count - 1) as f64)
        .collect()
}

/// One `(ε, t, site)` sample of the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltPoint {
    pub epsilon: f64,
    pub t: f64,
    pub site: usize,
    /// Macroscopic position `ε (y − o)`.
    pub x: Vec<f64>,
    pub rescaled: f64,
    pub gaussian: f64,
    pub error: f64,
}

/// Largest `|J_i| / |B(x, r₀)|` over the ball centres and times of one ε.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JDiagnostics {
    pub j: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub j4: f64,
    /// Largest `|J − (J₁ + J₂ + J₃ + J₄)|` with `J₂` evaluated directly,
    /// relative to `max(|J|, Σ|J_i|)`.
    pub recombination: f64,
    pub centres: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonResult {
    pub epsilon: f64,
    /// Reason the level was skipped (torus guard).
    pub skipped: Option<String>,
    #[serde(with = "ext_f64")]
    pub sup_error: f64,
    pub j: JDiagnostics,
    /// Largest `|Σ_j p m_j − 1|` over the times.
    pub mass_defect: f64,
    pub sites: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltSweepResult {
    pub origin: usize,
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    pub radius: f64,
    pub r0: f64,
    pub target: CltTarget,
    pub levels: Vec<EpsilonResult>,
    pub points: Vec<CltPoint>,
    pub scheme: SchemeRecord,
}

impl CltSweepResult {
    /// `(ε, sup error)` for the levels that ran.
    pub fn errors(&self) -> Vec<(f64, f64)> {
        self.levels
            .iter()
            .filter(|l| l.skipped.is_none())
            .map(|l| (l.epsilon, l.sup_error))
            .collect()
    }

    pub fn trend(&self) -> Trend {
        Trend::of(&self.errors().into_iter().map(|e| e.1).collect::<Vec<_>>())
    }

    /// Long-format CSV `epsilon,t,site,x0,…,rescaled,gaussian,error`.
    pub fn csv(&self) -> String {
        let d = self.target.dim();
        let mut s = String::from("epsilon,t,site");
        for a in 0..d {
            s.push_str(&format!(",x{a}"));
        }
        s.push_str(",rescaled,gaussian,error\n");
        for p in &self.points {
            s.push_str(&format!("{:.17e},{:.17e},{}", p.epsilon, p.t, p.site));
            for v in &p.x {
                s.push_str(&format!(",{v:.17e}"));
            }
            s.push_str(&format!(",{:.17e},{:.17e},{:.17e}\n", p.rescaled, p.gaussian, p.error));
        }
        s
    }
}

/// Monotone-trend summary of errors ordered from coarse to fine ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub errors: Vec<f64>,
    pub isotonic: Vec<f64>,
    /// Largest `|error − isotonic fit|` over the largest error.
    pub isotonic_residual: f64,
    /// Finest over coarsest error.
    pub finest_over_coarsest: f64,
}

impl Trend {
    pub fn of(errors: &[f64]) -> Trend {
        let isotonic = isotonic_nonincreasing(errors);
        let max = errors.iter().copied().fold(0.0, f64::max);
        let dev = errors
            .iter()
            .zip(&isotonic)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Trend {
            errors: errors.to_vec(),
            isotonic,
            isotonic_residual: if max > 0.0 { dev / max } else { 0.0 },
            finest_over_coarsest: match (errors.first(), errors.last()) {
                (Some(&a), Some(&b)) if a > 0.0 => b / a,
                _ => f64::NAN,
            },
        }
    }
}

/// Ball centres covering `B(o, r)`: the macroscopic lattice `r₀ ℤ^d` inside the
/// ball, snapped to sites.
fn centres(form: &FormMatrix, o: usize, r: f64, r0: f64, eps: f64) -> Vec<usize> {
    let d = form.grid.d;
    let k = (r / r0).floor() as i64;
    let mut out = Vec::new();
    let mut idx = vec![-k; d];
    loop {
        let macro_norm = idx.iter().map(|&i| (i as f64 * r0).powi(2)).sum::<f64>().sqrt();
        if macro_norm <= r + 1e-12 {
            let off: Vec<i64> = idx
                .iter()
                .map(|&i| (i as f64 * r0 / (eps * form.grid.h)).round() as i64)
                .collect();
            out.push(form.grid.shift(o, &off));
        }
        let mut a = 0;
        loop {
            if a == d {
                out.sort_unstable();
                out.dedup();
                return out;
            }
            idx[a] += 1;
            if idx[a] <= k {
                break;
            }
            idx[a] = -k;
            a += 1;
        }
    }
}

/// `J, J₁, J₂ (direct), J₃, J₄` at one centre and time.
#[allow(clippy::too_many_arguments)]
fn j_terms(
    form: &FormMatrix,
    column: &[f64],
    o: usize,
    centre: usize,
    t: f64,
    eps: f64,
    r0: f64,
    target: &CltTarget,
) -> Result<([f64; 5], f64)> {
    let grid = &form.grid;
    let d = grid.d;
    let hd = grid.cell_volume();
    let epsd = eps.powi(d as i32);
    let ball = grid.ball_sites(centre, r0 / eps);
    let macro_pos = |y: usize| -> Vec<f64> { grid.displacement(o, y).into_iter().map(|v| eps * v).collect() };
    let kx = gaussian(target, t, &macro_pos(centre))?;
    let px = column[centre];
    let ks: Vec<f64> = ball
        .iter()
        .map(|&y| gaussian(target, t, &macro_pos(y)))
        .collect::<Result<_>>()?;
    let volume = epsd * hd * ball.len() as f64;
    let lam = ordered_sum(ball.iter().map(|&y| form.mass[y]));
    let j = ordered_sum(ball.iter().map(|&y| column[y] * form.mass[y])) - ordered_sum(ks.iter().map(|k| k * epsd * hd));
    let j1 = ordered_sum(ball.iter().map(|&y| (column[y] - px) * form.mass[y]));
    let j2 = lam * (px - epsd * kx / target.a_lambda);
    let j3 = kx * (epsd * lam / target.a_lambda - volume);
    let j4 = ordered_sum(ks.iter().map(|k| (kx - k) * epsd * hd));
    Ok(([j, j1, j2, j3, j4], volume))
}

fn gaussian(target: &CltTarget, t: f64, x: &[f64]) -> Result<f64> {
    super::target::gaussian_kernel(&target.sigma, t, x)
}

/// Runs the sweep for one origin. `stabilization_radius`, when given, must not
/// exceed `r / ε` at the finest level that runs.
#[allow(clippy::too_many_arguments)]
pub fn clt_sweep(
    form: &FormMatrix,
    o: usize,
    epsilons: &[f64],
    times: &[f64],
    r: f64,
    r0: f64,
    target: &CltTarget,
    stabilization_radius: Option<f64>,
    opts: &HeatOptions,
) -> Result<CltSweepResult> {
    target.validate()?;
    if target.dim() != form.grid.d {
        return Err(Error::DimensionMismatch(format!(
            "Σ is {0}×{0}, torus has d = {1}",
            target.dim(),
            form.grid.d
        )));
    }
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0)) || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("ε ladder must be positive and descending".into()));
    }
    if times.is_empty() || times[0] <= 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("times must be positive and ascending".into()));
    }
    if !(r > 0.0) || !(r0 > 0.0) {
        return Err(Error::InvalidArgument(format!("need r, r₀ > 0 (got {r}, {r0})")));
    }
    if o >= form.num_sites() {
        return Err(Error::InvalidArgument(format!("origin {o} outside the torus")));
    }
    let t_max = *times.last().unwrap();
    let skipped: Vec<Option<String>> = epsilons
        .iter()
        .map(|&e| check_torus_guard(form, t_max / (e * e)).err().map(|err| err.to_string()))
        .collect();
    let running: Vec<f64> = epsilons
        .iter()
        .zip(&skipped)
        .filter(|(_, s)| s.is_none())
        .map(|(&e, _)| e)
        .collect();
    if let (Some(&finest), Some(s)) = (running.last(), stabilization_radius) {
        if r / finest < s {
            return Err(Error::Condition(format!(
                "r/ε = {} at the finest ε = {finest} is below the stabilization radius {s}",
                r / finest
            )));
        }
    }
    // every micro time t/ε² of the running levels, merged
    let mut micro: Vec<f64> = running
        .iter()
        .flat_map(|&e| times.iter().map(move |&t| t / (e * e)))
        .collect();
    micro.sort_by(f64::total_cmp);
    micro.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    let (values, scheme) = if micro.is_empty() {
        (Vec::new(), SchemeRecord::default())
    } else {
        let snaps = kernel_snapshots(form, &[o], &micro, opts)?;
        (
            snaps.values.into_iter().map(|mut v| v.pop().unwrap()).collect::<Vec<_>>(),
            snaps.scheme,
        )
    };
    let lookup = |tm: f64| -> &Vec<f64> {
        let k = micro
            .iter()
            .position(|&m| (m - tm).abs() <= 1e-12 * tm)
            .expect("micro time was scheduled");
        &values[k]
    };
    let d = form.grid.d;
    let mut levels = Vec::with_capacity(epsilons.len());
    let mut points = Vec::new();
    for (&eps, skip) in epsilons.iter().zip(skipped) {
        if let Some(reason) = skip {
            levels.push(EpsilonResult {
                epsilon: eps,
                skipped: Some(reason),
                sup_error: f64::NAN,
                j: JDiagnostics::default(),
                mass_defect: f64::NAN,
                sites: 0,
            });
            continue;
        }
        let sites = form.grid.ball_sites(o, r / eps);
        let cs = centres(form, o, r, r0, eps);
        let mut sup_error: f64 = 0.0;
        let mut mass_defect: f64 = 0.0;
        let mut jd = JDiagnostics {
            centres: cs.len(),
            ..JDiagnostics::default()
        };
        for &t in times {
            let col = lookup(t / (eps * eps));
            mass_defect = mass_defect.max((ordered_sum(col.iter().zip(&form.mass).map(|(p, m)| p * m)) - 1.0).abs());
            for &y in &sites {
                let x: Vec<f64> = form.grid.displacement(o, y).into_iter().map(|v| eps * v).collect();
                let rescaled = col[y] / eps.powi(d as i32);
                let g = target.density(t, &x)?;
                let error = (rescaled - g).abs();
                sup_error = sup_error.max(error);
                points.push(CltPoint {
                    epsilon: eps,
                    t,
                    site: y,
                    x,
                    rescaled,
                    gaussian: g,
                    error,
                });
            }
            for &c in &cs {
                let ([j, j1, j2_direct, j3, j4], vol) = j_terms(form, col, o, c, t, eps, r0, target)?;
                let j2 = j - j1 - j3 - j4;
                let scale = j.abs().max(j1.abs() + j2.abs() + j3.abs() + j4.abs()).max(f64::MIN_POSITIVE);
                jd.recombination = jd.recombination.max((j2 - j2_direct).abs() / scale);
                jd.j = jd.j.max(j.abs() / vol);
                jd.j1 = jd.j1.max(j1.abs() / vol);
                jd.j2 = jd.j2.max(j2.abs() / vol);
                jd.j3 = jd.j3.max(j3.abs() / vol);
                jd.j4 = jd.j4.max(j4.abs() / vol);
            }
        }
        levels.push(EpsilonResult {
            epsilon: eps,
            skipped: None,
            sup_error,
            j: jd,
            mass_defect,
            sites: sites.len(),
        });
    }
    Ok(CltSweepResult {
        origin: o,
        epsilons: epsilons.to_vec(),
        times: times.to_vec(),
        radius: r,
        r0,
        target: target.clone(),
        levels,
        points,
        scheme,
    })
}

#[cfg(test)]
mod tests {
    use super::super::target::{CltTarget, SigmaMethod};
    use super::*;
    use crate::env::{generate_environment, EnvironmentSpec, Model};
    use crate::form::assemble_form;

    #[test]
    fn trend_of_a_decreasing_sequence() {
        let t = Trend::of(&[1.0, 0.5, 0.3, 0.1]);
        assert_eq!(t.isotonic_residual, 0.0);
        assert!((t.finest_over_coarsest - 0.1).abs() < 1e-15);
        let bumpy = Trend::of(&[1.0, 0.5, 0.7, 0.1]);
        assert!((bumpy.isotonic_residual - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_sweep_decomposes_exactly() {
        let s = generate_environment(&EnvironmentSpec::new(2, 128, Model::Constant, 1)).unwrap();
        let f = assemble_form(&s, &s.grid).unwrap();
        let target = CltTarget::new(vec![vec![2.0, 0.0], vec![0.0, 2.0]], 1.0, SigmaMethod::Corrector).unwrap();
        let times = interval_grid(0.5, 2.0, 3);
        let res = clt_sweep(&f, f.grid.center_site(), &[1.0, 0.5, 0.25], &times, 1.0, 0.5, &target, None, &HeatOptions::default()).unwrap();
        assert_eq!(res.levels.len(), 3);
        for l in &res.levels {
            assert!(l.skipped.is_none());
            assert!(l.j.recombination <= 1e-10, "{}", l.j.recombination);
            assert!(l.mass_defect <= 1e-8);
        }
        let e = res.errors();
        assert!(e[2].1 < e[0].1);
        assert!(res.csv().lines().count() == res.points.len() + 1);
    }

    #[test]
    fn guard_skips_fine_levels() {
        let s = generate_environment(&EnvironmentSpec::new(2, 32, Model::Constant, 1)).unwrap();
        let f = assemble_form(&s, &s.grid).unwrap();
        let target = CltTarget::new(vec![vec![2.0, 0.0], vec![0.0, 2.0]], 1.0, SigmaMethod::Corrector).unwrap();
        let res = clt_sweep(&f, 0, &[1.0, 0.125], &[0.5, 1.0], 1.0, 0.5, &target, None, &HeatOptions::default()).unwrap();
        assert!(res.levels[0].skipped.is_none());
        assert!(res.levels[1].skipped.is_some());
    }
}
