//! Heat kernel of a Pareto environment: mass, symmetry, Chapman–Kolmogorov
//! and on-diagonal decay.
//!
//! `cargo run --release --example heat_kernel`

use heatlab::env::{generate_environment, EnvironmentSpec, Model};
use heatlab::form::assemble_form;
use heatlab::heat::{chapman_kolmogorov_residual, diagonal_profile, diagonal_slope, kernel_columns, HeatOptions};

fn main() -> heatlab::Result<()> {
    let sample = generate_environment(&EnvironmentSpec::new(2, 64, Model::IidCellPareto, 7))?;
    let form = assemble_form(&sample, &sample.grid)?;
    let opts = HeatOptions::default();
    let o = form.grid.center_site();
    let x = form.grid.shift(o, &[2, 1]);
    let (cols, scheme) = kernel_columns(&form, &[o, x], 4.0, &opts)?;
    let mass = form.inner_m(&cols[0].values, &vec![1.0; form.num_sites()]);
    println!("mass of p_4(o, ·)      {mass:.15}");
    println!("p_4(o,x) − p_4(x,o)    {:e}", cols[0].values[x] - cols[1].values[o]);
    println!("steps {} (fallbacks {})", scheme.steps, scheme.fallbacks);
    let ck = chapman_kolmogorov_residual(&form, o, 1.0, 1.0, &opts)?;
    println!("Chapman–Kolmogorov     {:e} over {} probes", ck.residual, ck.probes);
    let times = [4.0, 8.0, 16.0, 32.0];
    let profile = diagonal_profile(&form, &times, &opts)?;
    for (t, v) in profile.pairs() {
        println!("sup_x p_{t}(x, x) = {v:.6e}");
    }
    println!("slope over [4, 32]     {:.4}", diagonal_slope(&profile, 4.0, 32.0)?);
    Ok(())
}
