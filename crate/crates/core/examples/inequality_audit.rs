//! Audits the ten Sobolev, Nash and Poincaré inequalities on one ball.
//!
//! `cargo run --release --example inequality_audit`

use heatlab::env::{generate_environment, EnvironmentSpec, Model};
use heatlab::form::Ball;
use heatlab::funcineq::{exponents, stabilization_radius, Calibration, Inequality, InequalityAuditor};

fn main() -> heatlab::Result<()> {
    let model = Model::Lognormal {
        sigma: 0.5,
        correlation_length: 2.0,
    };
    let sample = generate_environment(&EnvironmentSpec::new(2, 64, model, 3))?;
    let exps = exponents(4.0, 4.0, 2)?;
    println!("ρ = {}, ν = {:.4}, μ = {:.4}, γ = {:.4}", exps.rho, exps.nu, exps.mu, exps.gamma);
    let center = sample.grid.center_site();
    let auditor = InequalityAuditor::new(&sample, Ball::new(&sample.grid, center, 8.0)?, exps.clone())?;
    for which in Inequality::ALL {
        let rep = auditor.audit(which, 200, 1, Calibration::bundled())?;
        let eigen = rep.eigen_best.map_or(String::new(), |e| format!("  eigen {e:.4e}"));
        println!(
            "{:<26} best {:.4e}  bound {:.4e}  pass {:?}{eigen}",
            which.name(),
            rep.empirical_best,
            rep.calibration_factor.unwrap_or(f64::NAN) * rep.bound_factor,
            rep.pass
        );
    }
    let stab = stabilization_radius(&sample, center, 1.0, &exps)?;
    println!("s(x, 1) = {} (flagged {})", stab.radius, stab.flagged);
    Ok(())
}
