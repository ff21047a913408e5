//! Regenerates `src/funcineq/calibration.json`.
//!
//! Inequality factors are the largest trial ratios on the constant
//! environment (the exact eigen constant for Poincaré variants). Trial
//! functions have a fixed width of 3h, so their ratios shrink as the ball
//! grows; calibrating at the smallest audited radius keeps the factors valid
//! above it. Run with
//! `cargo run --release --example calibrate -- [output path]`.

use std::collections::BTreeMap;

use heatlab::env::{generate_environment, EnvironmentSpec, Model};
use heatlab::form::Ball;
use heatlab::funcineq::calibration::InequalityCalibration;
use heatlab::funcineq::{exponents, Calibration, Inequality, InequalityAuditor};
use heatlab::moser::calibrate_envelopes;

fn inequality_factors(d: usize, n: usize, radius_cells: f64, trials: usize, seed: u64) -> InequalityCalibration {
    let (p, q) = (4.0, 4.0);
    let sample = generate_environment(&EnvironmentSpec::new(d, n, Model::Constant, seed)).unwrap();
    let ball = Ball::new(&sample.grid, sample.grid.center_site(), radius_cells * sample.grid.h).unwrap();
    let auditor = InequalityAuditor::new(&sample, ball, exponents(p, q, d).unwrap()).unwrap();
    let mut raw = BTreeMap::new();
    for which in Inequality::ALL {
        let ratios = auditor.ratios(which, trials, seed).unwrap();
        let mut best = ratios.into_iter().flatten().fold(0.0, f64::max);
        if which.is_poincare() {
            best = best.max(auditor.eigen_best(which).unwrap());
        }
        let value = best / which.constant(&auditor.constants);
        println!("d={d} {which:<26} {value:.6}");
        raw.insert(which, value);
    }
    InequalityCalibration {
        d,
        cells_per_side: n,
        radius_cells,
        p,
        q,
        trials,
        seed,
        raw,
    }
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/src/funcineq/calibration.json".into());
    let inequalities = vec![
        inequality_factors(2, 64, 8.0, 200, 2024),
        inequality_factors(3, 32, 8.0, 200, 2024),
    ];
    let envelopes = calibrate_envelopes().unwrap();
    for (k, v) in &envelopes {
        println!("{k:<28} {v:.6}");
    }
    let cal = Calibration {
        version: "2026.10-1".into(),
        headroom: 2.0,
        inequalities,
        envelopes,
    };
    std::fs::write(&out, cal.to_json().unwrap() + "\n").unwrap();
    println!("wrote {out}");
}
