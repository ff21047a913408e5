//! Level-set measures of `log u` for positive caloric functions.
//!
//! `cargo run --release --example log_levels`

use heatlab::env::{generate_environment, EnvironmentSpec, Model};
use heatlab::form::assemble_form;
use heatlab::funcineq::{exponents, Calibration};
use heatlab::heat::HeatOptions;
use heatlab::moser::{log_level_batch, LogLevelParams, LEVELS, LOG_LEVEL_SPREAD};

fn main() -> heatlab::Result<()> {
    let sample = generate_environment(&EnvironmentSpec::new(2, 64, Model::IidCellPareto, 1))?;
    let form = assemble_form(&sample, &sample.grid)?;
    let exps = exponents(4.0, 4.0, 2)?;
    let params = LogLevelParams::new(form.grid.center_site(), 8.0, 8, 3);
    let envelope = Calibration::bundled().envelope(LOG_LEVEL_SPREAD);
    let batch = log_level_batch(&sample, &form, &params, &exps, &LEVELS, envelope, &HeatOptions::default())?;
    println!("levels {:?}", batch.levels);
    for rep in &batch.reports {
        println!("k = {:.4}  sub {:?}  super {:?}", rep.k, rep.sub_measure, rep.super_measure);
    }
    println!("max spread {:.3}, envelope {envelope:?}, pass {:?}", batch.max_spread, batch.pass);
    Ok(())
}
