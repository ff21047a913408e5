//! Runs the full pipeline from a configuration file and prints the manifest
//! summary.
//!
//! `cargo run --release --example pipeline -- configs/constant-n32.toml`

use heatlab::pipeline::{parse_config, run};

fn main() -> heatlab::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/constant-n32.toml".into());
    let parsed = parse_config(&std::fs::read_to_string(&path)?, false)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    let mut config = parsed.config;
    config.output = std::env::temp_dir().join("heatlab-example");
    let manifest = run(&config)?;
    for stage in &manifest.stages {
        println!("{:<18} {:>8.2}s {:?}", stage.name, stage.seconds, stage.status);
    }
    println!("pass {} ({} files in {})", manifest.pass, manifest.outputs.len(), config.output.display());
    Ok(())
}
