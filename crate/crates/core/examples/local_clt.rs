//! Local CLT sweep along the ε ladder with the corrector covariance.
//!
//! `cargo run --release --example local_clt`

use heatlab::clt::{clt_sweep, interval_grid, mean_speed, sigma_from_corrector, solve_corrector, DEFAULT_EPSILONS};
use heatlab::env::{generate_environment, EnvironmentSpec, Model};
use heatlab::form::assemble_form;
use heatlab::heat::HeatOptions;

fn main() -> heatlab::Result<()> {
    let model = Model::Lognormal {
        sigma: 0.5,
        correlation_length: 2.0,
    };
    let sample = generate_environment(&EnvironmentSpec::new(2, 256, model, 1))?;
    let form = assemble_form(&sample, &sample.grid)?;
    let corrector = solve_corrector(&sample, &sample.grid)?;
    let target = sigma_from_corrector(&corrector, mean_speed(&form))?;
    println!("Σ = {:?}", target.sigma);
    let times = interval_grid(0.5, 2.0, 5);
    let res = clt_sweep(
        &form,
        form.grid.center_site(),
        &DEFAULT_EPSILONS,
        &times,
        1.0,
        0.25,
        &target,
        None,
        &HeatOptions::default(),
    )?;
    for level in &res.levels {
        match &level.skipped {
            Some(why) => println!("ε = {:<6} skipped: {why}", level.epsilon),
            None => println!("ε = {:<6} sup error {:.5}", level.epsilon, level.sup_error),
        }
    }
    let trend = res.trend();
    println!("isotonic residual {:.3}, finest/coarsest {:.3}", trend.isotonic_residual, trend.finest_over_coarsest);
    Ok(())
}
