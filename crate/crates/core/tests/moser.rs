mod common;

use common::{environment, lognormal, DenseSemigroup};
use heatlab::env::Model;
use heatlab::funcineq::exponents;
use heatlab::heat::{kernel_columns, point_mass, HeatOptions};
use heatlab::moser::{
    cylinders, harnack_batch, harnack_ratio, log_level_batch, oscillation_batch, HarnackParams, LogLevelParams,
    OscillationParams, Solution, LEVELS,
};

/// Harnack ratios recomputed from the dense spectral propagator, replaying
/// the solver's step kinds.
#[test]
fn harnack_constant_matches_dense_oracle_at_n16() {
    let (sample, form) = environment(Model::Constant, 16, 1);
    let center = form.grid.center_site();
    let params = HarnackParams::new(center, 4.0, 8, 3);
    let opts = HeatOptions::default();
    let audit = harnack_batch(&sample, &form, &params, &opts, true, None).unwrap();
    assert!(audit.all_finite);

    let dt = params.step();
    let shift_opts = opts.clone().with_dt(dt);
    let (_, shift) = kernel_columns(&form, &audit.origins, params.kernel_shift(), &shift_opts).unwrap();
    let dense = DenseSemigroup::new(&form);
    let window = form.grid.ball_sites(center, params.delta * params.radius);
    let cyl = cylinders(&form.grid, center, params.horizon(), params.radius, params.tau, params.delta, 0.5).unwrap();
    let steps = audit.scheme.decisions.len();
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * params.horizon() / steps as f64).collect();
    let mut oracle_ch: f64 = 0.0;
    for (&o, record) in audit.origins.iter().zip(&audit.records) {
        let mut kinds = shift.decisions.clone();
        let start = dense.stepped(&point_mass(&form.mass, o), dt, &kinds);
        let mut values = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            kinds.clear();
            kinds.extend_from_slice(&audit.scheme.decisions[..k]);
            let u = dense.stepped(&start, dt, &kinds);
            values.push(window.iter().map(|&s| u[s]).collect::<Vec<f64>>());
        }
        let sol = Solution::new(times.clone(), Some(window.clone()), values, form.num_sites(), Default::default()).unwrap();
        let oracle = harnack_ratio(&sol, &cyl).unwrap();
        assert!((oracle.ratio - record.ratio).abs() <= 1e-6 * oracle.ratio, "{} vs {}", oracle.ratio, record.ratio);
        oracle_ch = oracle_ch.max(oracle.ratio);
    }
    assert!((oracle_ch - audit.measured).abs() <= 1e-6 * oracle_ch);
}

#[test]
fn harnack_ratios_are_at_least_one() {
    let (sample, form) = environment(lognormal(), 64, 2);
    let params = HarnackParams::new(form.grid.center_site(), 8.0, 12, 5);
    let audit = harnack_batch(&sample, &form, &params, &HeatOptions::default(), true, Some(4.0)).unwrap();
    assert!(audit.all_finite);
    assert_eq!(audit.flagged, 0);
    assert!(audit.records.iter().all(|r| r.ratio >= 1.0 - 1e-9));
    assert_eq!(audit.above_stabilization, Some(true));
}

#[test]
fn harnack_is_deterministic() {
    let (sample, form) = environment(Model::IidCellPareto, 32, 8);
    let params = HarnackParams::new(form.grid.center_site(), 4.0, 6, 11);
    let a = harnack_batch(&sample, &form, &params, &HeatOptions::default(), true, None).unwrap();
    let b = harnack_batch(&sample, &form, &params, &HeatOptions::default(), true, None).unwrap();
    assert_eq!(a.origins, b.origins);
    assert_eq!(a.ratios(), b.ratios());
}

#[test]
fn trap_harnack_constant_grows_with_radius() {
    let (sample, form) = environment(Model::TrapCounterexample { beta: 1.0 }, 64, 1);
    let mut last = 0.0;
    for r in [4.0, 8.0, 16.0] {
        let params = HarnackParams::new(form.grid.center_site(), r, 10, 3);
        let audit = harnack_batch(&sample, &form, &params, &HeatOptions::default(), false, None).unwrap();
        assert!(audit.measured > last, "r = {r}: {} after {last}", audit.measured);
        last = audit.measured;
    }
}

#[test]
fn log_level_measure_is_nonincreasing_in_level() {
    let (sample, form) = environment(Model::IidCellPareto, 64, 3);
    let exps = exponents(4.0, 4.0, 2).unwrap();
    let params = LogLevelParams::new(form.grid.center_site(), 8.0, 6, 7);
    let batch = log_level_batch(&sample, &form, &params, &exps, &LEVELS, None, &HeatOptions::default()).unwrap();
    assert_eq!(batch.reports.len(), 6);
    assert!(batch.pass.is_none());
    for rep in &batch.reports {
        for m in [&rep.sub_measure, &rep.super_measure] {
            assert!(m.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{m:?}");
        }
    }
}

#[test]
fn oscillation_contracts_on_constant_environment() {
    let (_, form) = environment(Model::Constant, 64, 1);
    let params = OscillationParams::new(form.grid.center_site(), 16.0, 2, 6, 3);
    let batch = oscillation_batch(&form, &params, 4.0, &HeatOptions::default()).unwrap();
    assert!(batch.check.pass, "{:?}", batch.check);
    for rep in &batch.reports {
        assert!(rep.contractions.iter().all(|&c| c <= 1.0 + 1e-12), "{:?}", rep.contractions);
    }
}
