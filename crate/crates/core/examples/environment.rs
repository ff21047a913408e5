//! Generates each environment model and prints its moment statistics.
//!
//! `cargo run --release --example environment`

use heatlab::env::{generate_environment, moment_report, EnvironmentSpec, Model};

fn main() -> heatlab::Result<()> {
    let models = [
        Model::Constant,
        Model::Lognormal {
            sigma: 0.5,
            correlation_length: 2.0,
        },
        Model::IidCellPareto,
        Model::Layered { sigma: 0.5 },
        Model::TrapCounterexample { beta: 1.0 },
    ];
    println!("{:<22} {:>12} {:>14} {:>10} {:>6}", "model", "E[Λ^p]", "E[λ^-q]", "1/p+1/q", "ok");
    for model in models {
        let sample = generate_environment(&EnvironmentSpec::new(2, 64, model.clone(), 1))?;
        sample.check_invariants()?;
        let m = moment_report(&sample, 4.0, 4.0)?;
        println!(
            "{:<22} {:>12.4} {:>14.4} {:>10.3} {:>6}",
            model.name(),
            m.mean_upper_p,
            m.mean_lower_inv_q,
            m.condition_value,
            m.condition_ok
        );
    }
    Ok(())
}
