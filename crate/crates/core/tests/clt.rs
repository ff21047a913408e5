mod common;

use common::{environment, periodized_gaussian};
use heatlab::clt::{
    clt_sweep, gaussian_kernel, interval_grid, mean_speed, relative_operator_gap, second_moment, sigma_from_corrector,
    solve_corrector, CltTarget, SigmaMethod, Trend, DEFAULT_EPSILONS,
};
use heatlab::env::Model;
use heatlab::heat::{kernel_columns, HeatOptions};
use proptest::prelude::*;

/// Layered field: `a_hom` is the harmonic mean of face conductances across
/// the layers and the arithmetic mean along them.
#[test]
fn layered_corrector_matches_closed_form() {
    for seed in [1u64, 2, 3] {
        let (sample, form) = environment(Model::Layered { sigma: 0.5 }, 64, seed);
        let n = form.grid.n;
        let kappa: Vec<f64> = (0..n).map(|i| sample.lower[form.grid.index(&[i, 0])]).collect();
        let faces: Vec<f64> = (0..n).map(|i| 0.5 * (kappa[i] + kappa[(i + 1) % n])).collect();
        let harmonic = n as f64 / faces.iter().map(|c| 1.0 / c).sum::<f64>();
        let arithmetic = kappa.iter().sum::<f64>() / n as f64;
        let corr = solve_corrector(&sample, &sample.grid).unwrap();
        let a = mean_speed(&form);
        assert!((a - arithmetic).abs() <= 1e-12 * a);
        let target = sigma_from_corrector(&corr, a).unwrap();
        let expected = [2.0 * harmonic / a, 2.0];
        for k in 0..2 {
            let rel = (target.sigma[k][k] - expected[k]).abs() / expected[k];
            assert!(rel <= 0.01, "seed {seed} axis {k}: {} vs {}", target.sigma[k][k], expected[k]);
        }
        assert!(target.sigma[0][1].abs() <= 1e-8);
    }
}

#[test]
fn constant_corrector_is_trivial() {
    let (sample, form) = environment(Model::Constant, 32, 1);
    let corr = solve_corrector(&sample, &sample.grid).unwrap();
    let target = sigma_from_corrector(&corr, mean_speed(&form)).unwrap();
    assert!(relative_operator_gap(&target.sigma, &[vec![2.0, 0.0], vec![0.0, 2.0]]) < 1e-10);
    assert!(corr.chi.iter().flatten().all(|v| v.abs() < 1e-8));
}

#[test]
fn second_moment_tracks_diffusivity_on_constant_environment() {
    let (_, form) = environment(Model::Constant, 64, 1);
    let o = form.grid.center_site();
    let t = 8.0;
    let (cols, _) = kernel_columns(&form, &[o], t, &HeatOptions::default()).unwrap();
    let m = second_moment(&form, o, t, &cols[0].values);
    for k in 0..2 {
        assert!((m[k][k] - 2.0).abs() < 1e-3, "{m:?}");
    }
}

#[test]
fn gaussian_kernel_matches_closed_form() {
    let sigma = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
    for (t, x) in [(0.5, [0.0, 0.0]), (1.0, [0.3, -0.7]), (2.0, [1.5, 1.0])] {
        let k = gaussian_kernel(&sigma, t, &x).unwrap();
        let expected = periodized_gaussian(&x, 1e6, 2.0, t);
        assert!((k - expected).abs() <= 1e-14 * expected.max(1e-300));
    }
    let skew = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
    let det: f64 = 2.0 - 0.25;
    let x = [0.4, -0.2];
    let inv = [[1.0 / det, -0.5 / det], [-0.5 / det, 2.0 / det]];
    let q = x[0] * (inv[0][0] * x[0] + inv[0][1] * x[1]) + x[1] * (inv[1][0] * x[0] + inv[1][1] * x[1]);
    let expected = (-q / 2.0).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
    assert!((gaussian_kernel(&skew, 1.0, &x).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn sweep_skips_levels_beyond_the_torus_guard() {
    let (_, form) = environment(Model::Constant, 32, 1);
    let target = CltTarget::new(vec![vec![2.0, 0.0], vec![0.0, 2.0]], 1.0, SigmaMethod::Corrector).unwrap();
    let times = interval_grid(0.5, 2.0, 3);
    let res = clt_sweep(&form, form.grid.center_site(), &DEFAULT_EPSILONS, &times, 1.0, 0.25, &target, None, &HeatOptions::default())
        .unwrap();
    assert_eq!(res.levels.len(), 4);
    assert!(res.levels[0].skipped.is_none());
    assert!(res.levels[3].skipped.is_some());
    assert!(res.levels.iter().filter(|l| l.skipped.is_none()).all(|l| l.sup_error.is_finite()));
}

proptest! {
    #[test]
    fn isotonic_fit_of_a_decreasing_sequence_is_exact(mut v in proptest::collection::vec(0.0f64..1.0, 2..8)) {
        v.sort_by(|a, b| b.total_cmp(a));
        let tr = Trend::of(&v);
        prop_assert!(tr.isotonic_residual <= 1e-15);
        prop_assert_eq!(tr.isotonic, v);
    }

    #[test]
    fn isotonic_fit_is_nonincreasing(v in proptest::collection::vec(0.0f64..1.0, 2..8)) {
        let tr = Trend::of(&v);
        prop_assert!(tr.isotonic.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        prop_assert!(tr.isotonic_residual >= 0.0 && tr.isotonic_residual <= 1.0);
    }
}
