//! Parabolic Harnack constant over shifted heat kernels, and its growth on
//! the trap environment.
//!
//! `cargo run --release --example harnack`

use heatlab::env::{generate_environment, EnvironmentSpec, Model};
use heatlab::form::assemble_form;
use heatlab::heat::HeatOptions;
use heatlab::moser::{harnack_batch, HarnackParams};

fn main() -> heatlab::Result<()> {
    let opts = HeatOptions::default();
    for (model, admissible) in [(Model::IidCellPareto, true), (Model::TrapCounterexample { beta: 1.0 }, false)] {
        let sample = generate_environment(&EnvironmentSpec::new(2, 64, model.clone(), 1))?;
        let form = assemble_form(&sample, &sample.grid)?;
        for r in [4.0, 8.0, 16.0] {
            let params = HarnackParams::new(form.grid.center_site(), r, 10, 3);
            let audit = harnack_batch(&sample, &form, &params, &opts, admissible, None)?;
            println!("{:<20} r = {r:>4}  C_H = {:.4}  finite {}", model.name(), audit.measured, audit.all_finite);
        }
    }
    Ok(())
}
