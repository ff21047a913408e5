//! Orchestration: generate → assemble → audit → sweep, one stage at a time.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Experiment, RunConfig};
use super::manifest::{ArtifactWriter, Residual, RunManifest, StageRecord, StageStatus};
use super::plot::plot_files;
use crate::clt::{clt_sweep, interval_grid, sigma_cross_check, CltSweepResult, CrossCheck};
use crate::env::{encode_sample, generate_environment, moment_report, EnvironmentSpec, FieldSample, MomentReport};
use crate::form::{assemble_form, Ball, FormMatrix};
use crate::funcineq::{
    admissible, exponents, stabilization_radius, AuditReport, Calibration, ExponentSet, Inequality, InequalityAuditor,
    StabilizationReport,
};
use crate::heat::{diagonal_profile, diagonal_slope, ondiagonal_audit, DiagonalProfile, HeatOptions, OnDiagonalAudit, SchemeRecord};
use crate::moser::{
    harnack_batch, log_level_batch, oscillation_batch, HarnackParams, LogLevelParams, OscillationParams, LOG_LEVEL_SPREAD,
};
use crate::{Error, Result};

/// Largest isotonic-fit residual (relative to the largest error) of a passing sweep.
pub const CLT_TREND_TOLERANCE: f64 = 0.2;

/// `environment.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvironmentSummary {
    pub spec: EnvironmentSpec,
    pub moments: MomentReport,
    pub offdiagonal_frobenius: f64,
}

/// `diagonal.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagonalOutput {
    pub profile: DiagonalProfile,
    pub audit: OnDiagonalAudit,
    /// Log-log slope of `sup_x p_t(x,x)` over the probed times.
    pub slope: Option<f64>,
}

/// `clt/summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltSummary {
    pub cross_check: CrossCheck,
    pub origins: Vec<usize>,
    pub isotonic_residuals: Vec<f64>,
    pub finest_over_coarsest: Vec<f64>,
    pub pass: bool,
}

/// Files, audit verdict, residuals and flags produced by one stage.
#[derive(Default)]
struct StageOutput {
    files: Vec<(String, Vec<u8>)>,
    audit: Option<bool>,
    residuals: Vec<(String, f64)>,
    flags: Vec<String>,
}

impl StageOutput {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    fn text(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text.into_bytes()));
    }

    fn scheme(&mut self, label: &str, s: &SchemeRecord) {
        self.residuals.push((format!("{label} max relative residual"), s.max_relative_residual));
        self.residuals.push((format!("{label} implicit Euler fallbacks"), s.fallbacks as f64));
    }
}

struct Context {
    sample: FieldSample,
    form: FormMatrix,
    center: usize,
    exps: Option<ExponentSet>,
    stab: Option<StabilizationReport>,
    opts: HeatOptions,
}

struct Runner {
    writer: ArtifactWriter,
    manifest: RunManifest,
}

impl Runner {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<(T, StageOutput)>) -> Result<T> {
        let start = Instant::now();
        let result = f();
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Ok((value, out)) => {
                for (file, bytes) in &out.files {
                    self.writer.write(file, bytes)?;
                }
                let status = match out.audit {
                    None => StageStatus::Done,
                    Some(true) => StageStatus::Passed,
                    Some(false) => StageStatus::AuditFailed,
                };
                if out.audit == Some(false) {
                    self.manifest.pass = false;
                    self.manifest.flags.push(format!("{name}: audit failed"));
                }
                self.manifest.stages.push(StageRecord {
                    name: name.into(),
                    seconds,
                    status,
                });
                self.manifest.residuals.extend(out.residuals.into_iter().map(|(n, value)| Residual {
                    stage: name.into(),
                    name: n,
                    value,
                }));
                self.manifest.flags.extend(out.flags.into_iter().map(|f| format!("{name}: {f}")));
                Ok(value)
            }
            Err(e) => {
                let message = format!("{name}: {e}");
                self.manifest.stages.push(StageRecord {
                    name: name.into(),
                    seconds,
                    status: StageStatus::Aborted,
                });
                self.manifest.pass = false;
                self.manifest.failed = Some(message.clone());
                self.finish()?;
                self.writer.mark_failed(&message)?;
                Err(Error::Stage {
                    stage: name.into(),
                    source: Box::new(e),
                })
            }
        }
    }

    fn skip(&mut self, name: &str, reason: &str) {
        self.manifest.flags.push(format!("{name}: skipped ({reason})"));
    }

    fn finish(&mut self) -> Result<()> {
        self.manifest.outputs = self.writer.outputs().to_vec();
        self.writer.finish(&self.manifest)
    }
}

fn heat_options(config: &RunConfig) -> HeatOptions {
    HeatOptions {
        dt: config.solver.dt,
        tolerance: config.solver.tolerance,
        max_iterations: config.solver.max_iterations,
        guard: true,
    }
}

fn stages(experiment: Experiment) -> Vec<Experiment> {
    match experiment {
        Experiment::FullPipeline => vec![
            Experiment::InequalityAudit,
            Experiment::Harnack,
            Experiment::LogAudit,
            Experiment::Oscillation,
            Experiment::Diagonal,
            Experiment::CltSweep,
        ],
        Experiment::EnvGen => Vec::new(),
        e => vec![e],
    }
}

/// Runs the configured experiment and writes all outputs plus `manifest.json`
/// into `config.output`. A stage error leaves a `FAILED` marker next to the
/// partial outputs and is returned as [`Error::Stage`].
pub fn run(config: &RunConfig) -> Result<RunManifest> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let mut writer = ArtifactWriter::create(&config.output)?;
    writer.write("config.toml", config.to_toml().as_bytes())?;
    let calibration = Calibration::bundled();
    let mut runner = Runner {
        writer,
        manifest: RunManifest {
            experiment: config.experiment.name().into(),
            config_hash: config.hash(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            calibration_version: calibration.version.clone(),
            seed: config.seed,
            threads: rayon::current_num_threads(),
            stages: Vec::new(),
            residuals: Vec::new(),
            flags: Vec::new(),
            outputs: Vec::new(),
            pass: true,
            failed: None,
        },
    };
    let (sample, form) = runner.stage("environment", || environment_stage(config))?;
    let (p, q, d) = (config.exponents.p, config.exponents.q, config.environment.dimension);
    let exps = exponents(p, q, d).ok();
    let center = form.grid.center_site();
    let stab = match &exps {
        Some(e) => Some(runner.stage("stabilization", || stabilization_stage(&sample, center, e))?),
        None => {
            runner.skip("stabilization", "exponents undefined outside the moment condition");
            None
        }
    };
    let ctx = Context {
        sample,
        form,
        center,
        exps,
        stab,
        opts: heat_options(config),
    };
    for stage in stages(config.experiment) {
        let name = stage.name();
        match stage {
            Experiment::InequalityAudit => match &ctx.exps {
                Some(e) => runner.stage(name, || inequality_stage(config, &ctx, e, calibration))?,
                None => runner.skip(name, "exponents undefined outside the moment condition"),
            },
            Experiment::Harnack => runner.stage(name, || harnack_stage(config, &ctx))?,
            Experiment::LogAudit => match &ctx.exps {
                Some(e) => runner.stage(name, || log_stage(config, &ctx, e, calibration))?,
                None => runner.skip(name, "exponents undefined outside the moment condition"),
            },
            Experiment::Oscillation => runner.stage(name, || oscillation_stage(config, &ctx))?,
            Experiment::Diagonal => match (&ctx.exps, &ctx.stab) {
                (Some(e), Some(s)) => runner.stage(name, || diagonal_stage(config, &ctx, e, s))?,
                _ => runner.skip(name, "γ undefined outside the moment condition"),
            },
            Experiment::CltSweep => runner.stage(name, || clt_stage(config, &ctx))?,
            Experiment::EnvGen | Experiment::FullPipeline => unreachable!("not a stage"),
        }
    }
    let root = runner.writer.root().to_path_buf();
    runner.stage("plots", || {
        let (files, _missing) = plot_files(&root)?;
        Ok(((), StageOutput { files, ..StageOutput::default() }))
    })?;
    runner.finish()?;
    Ok(runner.manifest)
}

fn environment_stage(config: &RunConfig) -> Result<((FieldSample, FormMatrix), StageOutput)> {
    let spec = config.environment_spec()?;
    let sample = generate_environment(&spec)?;
    sample.check_invariants()?;
    let form = assemble_form(&sample, &sample.grid)?;
    let mut out = StageOutput::default();
    out.files.push(("environment.bin".into(), encode_sample(&sample)));
    let moments = moment_report(&sample, config.exponents.p, config.exponents.q)?;
    if !moments.condition_ok {
        out.flags.push(format!(
            "empirical moment condition value {:.4} is not below 2/d",
            moments.condition_value
        ));
    }
    out.json(
        "environment.json",
        &EnvironmentSummary {
            spec,
            offdiagonal_frobenius: sample.offdiagonal_frobenius(),
            moments,
        },
    )?;
    Ok(((sample, form), out))
}

fn stabilization_stage(sample: &FieldSample, center: usize, exps: &ExponentSet) -> Result<(StabilizationReport, StageOutput)> {
    let report = stabilization_radius(sample, center, 1.0, exps)?;
    let mut out = StageOutput::default();
    if report.flagged {
        out.flags.push(format!(
            "constants still moved by {:.3} over the last doubling",
            report.last_change
        ));
    }
    out.json("stabilization.json", &report)?;
    let mut csv = String::from("radius,c_s,c_p,m\n");
    for (r, v) in report.radii.iter().zip(report.tracked()) {
        csv.push_str(&format!("{r:.17e},{:.17e},{:.17e},{:.17e}\n", v[0], v[1], v[2]));
    }
    out.text("stabilization.csv", csv);
    Ok((report, out))
}

fn inequality_stage(config: &RunConfig, ctx: &Context, exps: &ExponentSet, cal: &Calibration) -> Result<((), StageOutput)> {
    let ball = Ball::new(&ctx.sample.grid, ctx.center, config.audit.radius)?;
    let auditor = InequalityAuditor::with_form(&ctx.sample, ctx.form.clone(), ball, exps.clone())?;
    let reports = Inequality::ALL
        .iter()
        .map(|&w| auditor.audit(w, config.audit.trials, config.seed, cal))
        .collect::<Result<Vec<AuditReport>>>()?;
    let mut out = StageOutput::default();
    if let Some(r) = cal.radius_cells(exps.d) {
        if config.audit.radius / ctx.sample.grid.h < r {
            out.flags.push(format!(
                "audit radius {} is below the calibration radius of {r} cells",
                config.audit.radius
            ));
        }
    }
    let mut pass = true;
    let mut csv = String::from("inequality,empirical_best,bound_factor,calibration_factor,eigen_best,pass\n");
    for r in &reports {
        match r.pass {
            None => {
                out.flags.push(format!("{} has no calibrated factor for d = {}", r.inequality.name(), exps.d));
                pass = false;
            }
            Some(false) => pass = false,
            Some(true) => {}
        }
        if r.eigen_consistent == Some(false) {
            out.flags.push(format!("{}: a trial exceeded the eigen best constant", r.inequality.name()));
            pass = false;
        }
        csv.push_str(&format!(
            "{},{:.17e},{:.17e},{},{},{}\n",
            r.inequality.name(),
            r.empirical_best,
            r.bound_factor,
            r.calibration_factor.map_or("".into(), |v| format!("{v:.17e}")),
            r.eigen_best.map_or("".into(), |v| format!("{v:.17e}")),
            r.pass.map_or("".into(), |v| v.to_string()),
        ));
    }
    out.json("inequality_audit.json", &reports)?;
    out.text("inequality_audit.csv", csv);
    out.audit = Some(pass);
    Ok(((), out))
}

fn harnack_stage(config: &RunConfig, ctx: &Context) -> Result<((), StageOutput)> {
    let c = &config.cylinder;
    let params = HarnackParams {
        center: ctx.center,
        radius: c.radius,
        tau: c.tau,
        delta: c.delta,
        solutions: c.solutions,
        seed: config.seed,
    };
    let condition = admissible(config.exponents.p, config.exponents.q, config.environment.dimension);
    let audit = harnack_batch(
        &ctx.sample,
        &ctx.form,
        &params,
        &ctx.opts,
        condition,
        ctx.stab.as_ref().map(|s| s.radius),
    )?;
    let mut out = StageOutput::default();
    out.scheme("kernel batch", &audit.scheme);
    if audit.above_stabilization == Some(false) {
        out.flags.push(format!(
            "r = {} does not exceed the stabilization radius {}",
            c.radius,
            audit.stabilization_radius.unwrap_or(f64::NAN)
        ));
    }
    let mut csv = String::from("origin,sup_minus,inf_plus,ratio,flagged\n");
    for (o, r) in audit.origins.iter().zip(&audit.records) {
        csv.push_str(&format!("{o},{:.17e},{:.17e},{:.17e},{}\n", r.sup_minus, r.inf_plus, r.ratio, r.flagged));
    }
    out.audit = Some(audit.all_finite && audit.flagged == 0);
    out.json("harnack.json", &audit)?;
    out.text("harnack_ratios.csv", csv);
    Ok(((), out))
}

fn log_stage(config: &RunConfig, ctx: &Context, exps: &ExponentSet, cal: &Calibration) -> Result<((), StageOutput)> {
    let c = &config.cylinder;
    let params = LogLevelParams {
        center: ctx.center,
        radius: c.radius,
        tau: c.tau,
        delta: c.delta,
        kappa: c.kappa,
        solutions: c.solutions,
        seed: config.seed,
        shift_fraction: c.shift_fraction,
    };
    let envelope = cal.envelope(LOG_LEVEL_SPREAD);
    let batch = log_level_batch(&ctx.sample, &ctx.form, &params, exps, &c.levels, envelope, &ctx.opts)?;
    let mut out = StageOutput::default();
    if envelope.is_none() {
        out.flags.push("no calibrated log-level envelope".into());
    }
    let mut csv = String::from("solution,origin,level,sub_measure,super_measure,weighted\n");
    for (k, (o, r)) in batch.origins.iter().zip(&batch.reports).enumerate() {
        for (i, l) in r.levels.iter().enumerate() {
            csv.push_str(&format!(
                "{k},{o},{l},{:.17e},{:.17e},{:.17e}\n",
                r.sub_measure[i], r.super_measure[i], r.weighted[i]
            ));
        }
    }
    out.audit = Some(batch.pass.unwrap_or(false));
    out.json("log_levels.json", &batch)?;
    out.text("log_levels.csv", csv);
    Ok(((), out))
}

fn oscillation_stage(config: &RunConfig, ctx: &Context) -> Result<((), StageOutput)> {
    let o = &config.oscillation;
    let params = OscillationParams::new(ctx.center, o.r0, o.k_max, o.solutions, config.seed);
    let mut out = StageOutput::default();
    let s = match &ctx.stab {
        Some(s) => s.radius,
        None => {
            out.flags.push("no stabilization radius; every level is checked".into());
            0.0
        }
    };
    let batch = oscillation_batch(&ctx.form, &params, s, &ctx.opts)?;
    let check = &batch.check;
    let mut csv = String::from("level,radius,measured_ch,worst_contraction,bound,checked\n");
    for k in 0..check.radii.len() {
        csv.push_str(&format!(
            "{k},{:.17e},{},{:.17e},{},{}\n",
            check.radii[k],
            check.measured_ch[k].map_or("".into(), |v| format!("{v:.17e}")),
            check.worst_contraction[k],
            check.bound[k].map_or("".into(), |v| format!("{v:.17e}")),
            check.checked[k]
        ));
    }
    out.audit = Some(check.pass);
    out.json("oscillation.json", &batch)?;
    out.text("oscillation.csv", csv);
    Ok(((), out))
}

fn diagonal_stage(
    config: &RunConfig,
    ctx: &Context,
    exps: &ExponentSet,
    stab: &StabilizationReport,
) -> Result<((), StageOutput)> {
    let times = &config.diagonal.times;
    let profile = diagonal_profile(&ctx.form, times, &ctx.opts)?;
    let audit = ondiagonal_audit(&profile, &ctx.form.grid, exps.gamma, ctx.center, stab.radius)?;
    let slope = if times.len() >= 2 {
        Some(diagonal_slope(&profile, times[0], times[times.len() - 1])?)
    } else {
        None
    };
    let mut out = StageOutput::default();
    out.scheme("diagonal profile", &profile.scheme);
    if !audit.power_holds {
        out.flags.push(format!("bare t^(-{:.4}) envelope exceeded (diagnostic)", exps.gamma));
    }
    let mut csv = String::from("t,sup_diagonal,log_t,log_sup,envelope_ratio,power_ratio\n");
    for (k, &t) in profile.times.iter().enumerate() {
        let v = profile.sup[k];
        csv.push_str(&format!(
            "{t:.17e},{v:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            t.ln(),
            v.ln(),
            audit.worst_ratio[k],
            audit.power_ratio[k]
        ));
    }
    out.audit = Some(audit.holds);
    out.json("diagonal.json", &DiagonalOutput { profile, audit, slope })?;
    out.text("diagonal.csv", csv);
    Ok(((), out))
}

/// `count` sites drawn uniformly from the torus.
pub fn random_origins(num_sites: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random_range(0..num_sites)).collect()
}

fn clt_stage(config: &RunConfig, ctx: &Context) -> Result<((), StageOutput)> {
    let c = &config.clt;
    let cross = sigma_cross_check(&ctx.sample, &ctx.form, &ctx.opts)?;
    let mut out = StageOutput::default();
    if !cross.agrees {
        out.flags.push(format!(
            "corrector Σ differs from Σ_est by {:.4} in operator norm; the sweep uses Σ_est",
            cross.relative_gap
        ));
    }
    let target = cross.selected().clone();
    let times = interval_grid(c.interval[0], c.interval[1], c.times);
    let origins = random_origins(ctx.form.num_sites(), c.origins, config.seed);
    let stab = ctx.stab.as_ref().map(|s| s.radius);
    let results = origins
        .par_iter()
        .map(|&o| clt_sweep(&ctx.form, o, &c.epsilons, &times, c.radius, c.r0, &target, stab, &ctx.opts))
        .collect::<Result<Vec<CltSweepResult>>>()?;
    let mut csv = String::from("origin_index,origin,epsilon,sup_error,skipped\n");
    let mut pass = true;
    let mut residuals = Vec::new();
    let mut ratios = Vec::new();
    for (k, res) in results.iter().enumerate() {
        for l in &res.levels {
            csv.push_str(&format!(
                "{k},{},{:.17e},{:.17e},{}\n",
                res.origin,
                l.epsilon,
                l.sup_error,
                l.skipped.is_some()
            ));
            if let Some(reason) = &l.skipped {
                let flag = format!("ε = {} skipped: {reason}", l.epsilon);
                if !out.flags.contains(&flag) {
                    out.flags.push(flag);
                }
            }
        }
        let trend = res.trend();
        if trend.errors.is_empty() || trend.isotonic_residual >= CLT_TREND_TOLERANCE {
            pass = false;
        }
        residuals.push(trend.isotonic_residual);
        ratios.push(trend.finest_over_coarsest);
        out.scheme(&format!("origin {k}"), &res.scheme);
        out.json(&format!("clt/origin_{k}.json"), res)?;
        out.text(&format!("clt/origin_{k}.csv"), res.csv());
    }
    out.text("clt_errors.csv", csv);
    out.json(
        "clt/summary.json",
        &CltSummary {
            cross_check: cross,
            origins,
            isotonic_residuals: residuals,
            finest_over_coarsest: ratios,
            pass,
        },
    )?;
    out.audit = Some(pass);
    Ok(((), out))
}

/// Process exit status for a run result: 0 pass, 1 audit failure,
/// 2 configuration error, 3 runtime or solver error.
pub fn exit_code(result: &Result<RunManifest>) -> i32 {
    match result {
        Ok(m) if m.pass => 0,
        Ok(_) => 1,
        Err(e) => error_code(e),
    }
}

pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidSpec(_) => 2,
        Error::Stage { source, .. } => match source.as_ref() {
            Error::Config(_) | Error::InvalidSpec(_) => 2,
            _ => 3,
        },
        _ => 3,
    }
}
