//! Dyadic oscillation decay of caloric functions.
//!
//! `cargo run --release --example oscillation`

use heatlab::env::{generate_environment, EnvironmentSpec, Model};
use heatlab::form::assemble_form;
use heatlab::heat::HeatOptions;
use heatlab::moser::{oscillation_batch, OscillationParams};

fn main() -> heatlab::Result<()> {
    let sample = generate_environment(&EnvironmentSpec::new(2, 128, Model::IidCellPareto, 1))?;
    let form = assemble_form(&sample, &sample.grid)?;
    let params = OscillationParams::new(form.grid.center_site(), 16.0, 2, 8, 3);
    let batch = oscillation_batch(&form, &params, 4.0, &HeatOptions::default())?;
    let c = &batch.check;
    for k in 0..c.worst_contraction.len() {
        println!(
            "r = {:>5}  worst contraction {:.4}  bound {:?}  checked {}",
            c.radii[k], c.worst_contraction[k], c.bound[k], c.checked[k]
        );
    }
    println!("pass {}", c.pass);
    Ok(())
}
