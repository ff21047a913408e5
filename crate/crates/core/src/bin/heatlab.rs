//! Command-line front end: one subcommand per experiment.
//!
//! Exit codes: 0 pass, 1 audit failure, 2 configuration error, 3 runtime or
//! solver error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use heatlab::pipeline::{emit_plot_data, error_code, exit_code, parse_config, run, Experiment, RunConfig};
use heatlab::Error;

#[derive(Parser)]
#[command(name = "heatlab", version, about = "Heat-kernel experiments on degenerate random environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an environment, its moments and stabilization curves.
    EnvGen(RunArgs),
    /// Audit the ten functional inequalities on a ball.
    InequalityAudit(RunArgs),
    /// Harnack ratios over a batch of shifted kernels.
    Harnack(RunArgs),
    /// Level-set decay of log u.
    LogAudit(RunArgs),
    /// Dyadic oscillation decay.
    Oscillation(RunArgs),
    /// On-diagonal heat-kernel decay.
    Diagonal(RunArgs),
    /// Local CLT sweep over the ε ladder.
    CltSweep(RunArgs),
    /// Every stage in sequence.
    FullPipeline(RunArgs),
    /// Regenerate plot data for a finished run directory.
    Plot {
        /// Run directory.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output` in the config, then
    /// `$HEATLAB_OUT/<experiment>`, then `heatlab-out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
    /// Reject unknown configuration keys.
    #[arg(long)]
    strict: bool,
    /// Default output root.
    #[arg(long = "out-root", env = "HEATLAB_OUT", hide = true)]
    out_root: Option<PathBuf>,
}

fn load(experiment: Experiment, args: &RunArgs) -> heatlab::Result<RunConfig> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?,
        None => String::new(),
    };
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Config(vec![e.to_string().trim().to_string()]))?;
    match table.get("experiment").and_then(|v| v.as_str()) {
        Some(e) if e != experiment.name() => {
            return Err(Error::Config(vec![format!(
                "experiment: the config says `{e}` but the subcommand is `{}`",
                experiment.name()
            )]))
        }
        _ => {
            table.insert("experiment".into(), experiment.name().into());
        }
    }
    let has_output = table.contains_key("output");
    let parsed = parse_config(&toml::to_string(&table).expect("table serializes"), args.strict)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    let mut config = parsed.config;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.output = match (&args.out, has_output, &args.out_root) {
        (Some(out), _, _) => out.clone(),
        (None, true, _) => config.output,
        (None, false, Some(root)) => root.join(experiment.name()),
        (None, false, None) => PathBuf::from("heatlab-out").join(experiment.name()),
    };
    Ok(config)
}

fn execute(experiment: Experiment, args: &RunArgs) -> i32 {
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return 3;
        }
    }
    let config = match load(experiment, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return error_code(&e);
        }
    };
    let result = run(&config);
    match &result {
        Ok(m) => {
            for s in &m.stages {
                println!("{:<18} {:>9.2}s  {:?}", s.name, s.seconds, s.status);
            }
            for f in &m.flags {
                println!("flag: {f}");
            }
            println!(
                "{} -> {}",
                if m.pass { "PASS" } else { "FAIL" },
                config.output.join(heatlab::pipeline::MANIFEST_FILE).display()
            );
        }
        Err(e) => eprintln!("error: {e}"),
    }
    exit_code(&result)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::EnvGen(a) => execute(Experiment::EnvGen, a),
        Command::InequalityAudit(a) => execute(Experiment::InequalityAudit, a),
        Command::Harnack(a) => execute(Experiment::Harnack, a),
        Command::LogAudit(a) => execute(Experiment::LogAudit, a),
        Command::Oscillation(a) => execute(Experiment::Oscillation, a),
        Command::Diagonal(a) => execute(Experiment::Diagonal, a),
        Command::CltSweep(a) => execute(Experiment::CltSweep, a),
        Command::FullPipeline(a) => execute(Experiment::FullPipeline, a),
        Command::Plot { dir } => match emit_plot_data(dir) {
            Ok((written, missing)) => {
                for p in written {
                    println!("wrote {}", p.display());
                }
                for m in missing {
                    println!("missing {m}");
                }
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                3
            }
        },
    };
    ExitCode::from(code as u8)
}
