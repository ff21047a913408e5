//! Run configuration: a TOML document with one table per stage.
//!
//! Every key has a default. Parsing reports all problems at once: syntax,
//! unknown keys (errors in strict mode, warnings otherwise), type mismatches
//! per table and semantic checks.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clt::{DEFAULT_EPSILONS, DEFAULT_INTERVAL};
use crate::env::{EnvironmentSpec, Model};
use crate::funcineq::admissible;
use crate::heat::DEFAULT_TOLERANCE;
use crate::moser::LEVELS;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    EnvGen,
    InequalityAudit,
    Harnack,
    LogAudit,
    Oscillation,
    Diagonal,
    CltSweep,
    FullPipeline,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::EnvGen,
        Experiment::InequalityAudit,
        Experiment::Harnack,
        Experiment::LogAudit,
        Experiment::Oscillation,
        Experiment::Diagonal,
        Experiment::CltSweep,
        Experiment::FullPipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::EnvGen => "env-gen",
            Experiment::InequalityAudit => "inequality-audit",
            Experiment::Harnack => "harnack",
            Experiment::LogAudit => "log-audit",
            Experiment::Oscillation => "oscillation",
            Experiment::Diagonal => "diagonal",
            Experiment::CltSweep => "clt-sweep",
            Experiment::FullPipeline => "full-pipeline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

/// `[environment]`. The model parameters not used by `model` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    pub dimension: usize,
    pub cells_per_side: usize,
    pub cell_size: f64,
    /// `constant`, `iid-cell-pareto`, `lognormal`, `trap-counterexample` or `layered`.
    pub model: String,
    pub sigma: f64,
    pub correlation_length: f64,
    pub beta: f64,
    pub tail_lambda_inv: f64,
    pub tail_lambda: f64,
    pub anisotropy: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        let spec = EnvironmentSpec::default();
        Self {
            dimension: spec.dimension,
            cells_per_side: spec.cells_per_side,
            cell_size: spec.cell_size,
            model: "constant".into(),
            sigma: 0.5,
            correlation_length: 2.0,
            beta: 1.0,
            tail_lambda_inv: spec.tail_lambda_inv,
            tail_lambda: spec.tail_lambda,
            anisotropy: spec.anisotropy,
        }
    }
}

impl EnvironmentConfig {
    pub fn model(&self) -> Result<Model> {
        Ok(match self.model.as_str() {
            "constant" => Model::Constant,
            "iid-cell-pareto" => Model::IidCellPareto,
            "lognormal" => Model::Lognormal {
                sigma: self.sigma,
                correlation_length: self.correlation_length,
            },
            "trap-counterexample" => Model::TrapCounterexample { beta: self.beta },
            "layered" => Model::Layered { sigma: self.sigma },
            other => {
                return Err(Error::Config(vec![format!(
                    "environment.model: unknown model `{other}` (expected constant, iid-cell-pareto, lognormal, trap-counterexample or layered)"
                )]))
            }
        })
    }

    pub fn spec(&self, seed: u64) -> Result<EnvironmentSpec> {
        Ok(EnvironmentSpec::new(self.dimension, self.cells_per_side, self.model()?, seed)
            .with_cell_size(self.cell_size)
            .with_tails(self.tail_lambda_inv, self.tail_lambda)
            .with_anisotropy(self.anisotropy))
    }
}

/// `[exponents]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExponentConfig {
    pub p: f64,
    pub q: f64,
}

impl Default for ExponentConfig {
    fn default() -> Self {
        Self { p: 4.0, q: 4.0 }
    }
}

/// `[audit]`: functional-inequality trials on `B(center, radius)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub radius: f64,
    pub trials: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { radius: 8.0, trials: 200 }
    }
}

/// `[cylinder]`: Harnack and log-level batches on `(0, τr²) × B(center, r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CylinderConfig {
    pub radius: f64,
    pub tau: f64,
    pub delta: f64,
    pub kappa: f64,
    pub solutions: usize,
    /// Log-level kernel shift as a fraction of `τr²`.
    pub shift_fraction: f64,
    pub levels: Vec<f64>,
}

impl Default for CylinderConfig {
    fn default() -> Self {
        Self {
            radius: 4.0,
            tau: 1.0,
            delta: 0.5,
            kappa: 0.5,
            solutions: 20,
            shift_fraction: 1.0 / 16.0,
            levels: LEVELS.to_vec(),
        }
    }
}

/// `[oscillation]`: dyadic cylinders `r_k = 2^{-k} r₀`, `k ≤ k_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OscillationConfig {
    pub r0: f64,
    pub k_max: usize,
    pub solutions: usize,
}

impl Default for OscillationConfig {
    fn default() -> Self {
        Self {
            r0: 8.0,
            k_max: 1,
            solutions: 20,
        }
    }
}

/// `[diagonal]`: times of the on-diagonal profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagonalConfig {
    pub times: Vec<f64>,
}

impl Default for DiagonalConfig {
    fn default() -> Self {
        Self {
            times: (0..=6).map(|k| f64::from(1u32 << k)).collect(),
        }
    }
}

/// `[clt]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CltConfig {
    /// Descending ε ladder.
    pub epsilons: Vec<f64>,
    /// Compact time interval `I`.
    pub interval: [f64; 2],
    /// Evenly spaced times in `I`.
    pub times: usize,
    /// Macroscopic radius `r`.
    pub radius: f64,
    /// Partition radius `r₀` of the J diagnostics.
    pub r0: f64,
    /// Random origins, reported separately.
    pub origins: usize,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            interval: [DEFAULT_INTERVAL.0, DEFAULT_INTERVAL.1],
            times: 5,
            radius: 1.0,
            r0: 0.25,
            origins: 4,
        }
    }
}

/// `[solver]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fixed time step; the per-stage default when absent.
    pub dt: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: 20_000,
            dt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output: PathBuf,
    /// Accept exponents violating `1/p + 1/q < 2/d`.
    pub failure_regime: bool,
    pub environment: EnvironmentConfig,
    pub exponents: ExponentConfig,
    pub audit: AuditConfig,
    pub cylinder: CylinderConfig,
    pub oscillation: OscillationConfig,
    pub diagonal: DiagonalConfig,
    pub clt: CltConfig,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            seed: 1,
            output: PathBuf::from("heatlab-out"),
            failure_regime: false,
            environment: EnvironmentConfig::default(),
            exponents: ExponentConfig::default(),
            audit: AuditConfig::default(),
            cylinder: CylinderConfig::default(),
            oscillation: OscillationConfig::default(),
            diagonal: DiagonalConfig::default(),
            clt: CltConfig::default(),
            solver: SolverConfig::default(),
        }
    }

    pub fn environment_spec(&self) -> Result<EnvironmentSpec> {
        self.environment.spec(self.seed)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every semantic problem of the configuration.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        need(&mut out, !self.output.as_os_str().is_empty(), "output: must not be empty".into());
        match self.environment_spec() {
            Ok(spec) => {
                out.extend(spec.problems().into_iter().map(|p| format!("environment: {p}")));
            }
            Err(Error::Config(errs)) => out.extend(errs),
            Err(e) => out.push(e.to_string()),
        }
        let (p, q, d) = (self.exponents.p, self.exponents.q, self.environment.dimension);
        need(&mut out, p > 1.0 && q > 1.0, format!("exponents: need p > 1 and q > 1 (got p = {p}, q = {q})"));
        if p > 1.0 && q > 1.0 && d >= 1 && !admissible(p, q, d) && !self.failure_regime {
            out.push(format!(
                "exponents: moment condition 1/p + 1/q < 2/d fails ({} ≥ {}); set failure_regime = true to run it",
                1.0 / p + 1.0 / q,
                2.0 / d as f64
            ));
        }
        let a = &self.audit;
        need(&mut out, a.radius > 0.0, format!("audit.radius: must be positive (got {})", a.radius));
        need(&mut out, a.trials >= 1, "audit.trials: must be at least 1".into());
        let c = &self.cylinder;
        need(&mut out, c.radius > 0.0, format!("cylinder.radius: must be positive (got {})", c.radius));
        need(&mut out, c.tau > 0.0, format!("cylinder.tau: must be positive (got {})", c.tau));
        need(&mut out, c.delta > 0.0 && c.delta < 1.0, format!("cylinder.delta: must lie in (0, 1) (got {})", c.delta));
        need(&mut out, c.kappa > 0.0 && c.kappa < 1.0, format!("cylinder.kappa: must lie in (0, 1) (got {})", c.kappa));
        need(&mut out, c.solutions >= 1, "cylinder.solutions: must be at least 1".into());
        need(&mut out, 
            c.shift_fraction > 0.0,
            format!("cylinder.shift_fraction: must be positive (got {})", c.shift_fraction),
        );
        need(&mut out, 
            !c.levels.is_empty() && c.levels.iter().all(|&l| l > 0.0) && c.levels.windows(2).all(|w| w[1] > w[0]),
            "cylinder.levels: must be positive and ascending".into(),
        );
        let o = &self.oscillation;
        need(&mut out, o.r0 > 0.0, format!("oscillation.r0: must be positive (got {})", o.r0));
        need(&mut out, o.solutions >= 1, "oscillation.solutions: must be at least 1".into());
        let t = &self.diagonal.times;
        need(&mut out, 
            !t.is_empty() && t.iter().all(|&v| v > 0.0) && t.windows(2).all(|w| w[1] > w[0]),
            "diagonal.times: must be positive and ascending".into(),
        );
        let l = &self.clt;
        need(&mut out, 
            !l.epsilons.is_empty()
                && l.epsilons.iter().all(|&e| e > 0.0 && e <= 1.0)
                && l.epsilons.windows(2).all(|w| w[1] < w[0]),
            "clt.epsilons: must be descending values in (0, 1]".into(),
        );
        need(&mut out, 
            l.interval[0] > 0.0 && l.interval[1] >= l.interval[0],
            format!("clt.interval: need 0 < a ≤ b (got {:?})", l.interval),
        );
        need(&mut out, l.times >= 1, "clt.times: must be at least 1".into());
        need(&mut out, l.radius > 0.0, format!("clt.radius: must be positive (got {})", l.radius));
        need(&mut out, 
            l.r0 > 0.0 && l.r0 <= l.radius,
            format!("clt.r0: must lie in (0, radius] (got {})", l.r0),
        );
        need(&mut out, l.origins >= 1, "clt.origins: must be at least 1".into());
        let s = &self.solver;
        need(&mut out, 
            s.tolerance > 0.0 && s.tolerance < 1.0,
            format!("solver.tolerance: must lie in (0, 1) (got {})", s.tolerance),
        );
        need(&mut out, s.max_iterations >= 1, "solver.max_iterations: must be at least 1".into());
        if let Some(dt) = s.dt {
            need(&mut out, dt > 0.0, format!("solver.dt: must be positive (got {dt})"));
        }
        out
    }
}

fn need(out: &mut Vec<String>, ok: bool, msg: String) {
    if !ok {
        out.push(msg);
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A validated configuration and the unknown keys tolerated outside strict mode.
#[derive(Clone, Debug)]
pub struct ParsedConfig {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

const TOP_KEYS: [&str; 4] = ["experiment", "seed", "output", "failure_regime"];

/// Keys of each table, from the serialized defaults.
fn known_keys(section: &str) -> Vec<String> {
    let defaults = toml::Table::try_from(RunConfig::new(Experiment::EnvGen)).expect("config serializes");
    let mut keys: Vec<String> = match defaults.get(section) {
        Some(toml::Value::Table(t)) => t.keys().cloned().collect(),
        _ => Vec::new(),
    };
    if section == "solver" {
        keys.push("dt".into());
    }
    keys
}

const SECTIONS: [&str; 8] = [
    "environment",
    "exponents",
    "audit",
    "cylinder",
    "oscillation",
    "diagonal",
    "clt",
    "solver",
];

fn section<T: DeserializeOwned + Default>(table: &toml::Table, name: &str, errors: &mut Vec<String>) -> T {
    match table.get(name) {
        None => T::default(),
        Some(toml::Value::Table(t)) => match t.clone().try_into::<T>() {
            Ok(v) => v,
            Err(e) => {
                errors.push(format!("[{name}]: {}", e.message()));
                T::default()
            }
        },
        Some(_) => {
            errors.push(format!("{name}: must be a table"));
            T::default()
        }
    }
}

/// Parses and validates a run configuration, collecting every problem.
pub fn parse_config(text: &str, strict: bool) -> Result<ParsedConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string().trim().to_string()]))?;
    let mut errors = Vec::new();
    let mut unknown = Vec::new();
    for (k, v) in &table {
        if TOP_KEYS.contains(&k.as_str()) {
            continue;
        }
        if SECTIONS.contains(&k.as_str()) {
            if let toml::Value::Table(t) = v {
                let known = known_keys(k);
                for key in t.keys().filter(|key| !known.contains(key)) {
                    unknown.push(format!("unknown key `{key}` in [{k}]"));
                }
            }
            continue;
        }
        unknown.push(format!("unknown key `{k}`"));
    }
    let experiment = match table.get("experiment") {
        None => {
            errors.push("experiment: missing (one of env-gen, inequality-audit, harnack, log-audit, oscillation, diagonal, clt-sweep, full-pipeline)".into());
            Experiment::EnvGen
        }
        Some(toml::Value::String(s)) => Experiment::parse(s).unwrap_or_else(|| {
            errors.push(format!("experiment: unknown experiment `{s}`"));
            Experiment::EnvGen
        }),
        Some(_) => {
            errors.push("experiment: must be a string".into());
            Experiment::EnvGen
        }
    };
    let mut config = RunConfig::new(experiment);
    match table.get("seed") {
        None => {}
        Some(toml::Value::Integer(s)) if *s >= 0 => config.seed = *s as u64,
        Some(_) => errors.push("seed: must be a nonnegative integer".into()),
    }
    match table.get("output") {
        None => {}
        Some(toml::Value::String(s)) => config.output = PathBuf::from(s),
        Some(_) => errors.push("output: must be a string".into()),
    }
    match table.get("failure_regime") {
        None => {}
        Some(toml::Value::Boolean(b)) => config.failure_regime = *b,
        Some(_) => errors.push("failure_regime: must be a boolean".into()),
    }
    config.environment = section(&table, "environment", &mut errors);
    config.exponents = section(&table, "exponents", &mut errors);
    config.audit = section(&table, "audit", &mut errors);
    config.cylinder = section(&table, "cylinder", &mut errors);
    config.oscillation = section(&table, "oscillation", &mut errors);
    config.diagonal = section(&table, "diagonal", &mut errors);
    config.clt = section(&table, "clt", &mut errors);
    config.solver = section(&table, "solver", &mut errors);
    let warnings = if strict {
        errors.extend(unknown);
        Vec::new()
    } else {
        unknown
    };
    if errors.is_empty() {
        errors.extend(config.problems());
    }
    if errors.is_empty() {
        Ok(ParsedConfig { config, warnings })
    } else {
        Err(Error::Config(errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(text: &str, strict: bool) -> Vec<String> {
        match parse_config(text, strict) {
            Err(Error::Config(e)) => e,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config("experiment = \"harnack\"\n", true).unwrap().config;
        assert_eq!(c, RunConfig::new(Experiment::Harnack));
        assert!(c.problems().is_empty());
    }

    #[test]
    fn defaults_round_trip() {
        for e in Experiment::ALL {
            let c = RunConfig::new(e);
            let back = parse_config(&c.to_toml(), true).unwrap().config;
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn p_q_three_in_two_dimensions_is_accepted() {
        let c = parse_config("experiment = \"harnack\"\n[exponents]\np = 3.0\nq = 3.0\n", true).unwrap();
        assert_eq!(c.config.exponents.p, 3.0);
    }

    #[test]
    fn p_q_two_in_two_dimensions_needs_the_failure_regime() {
        let text = "experiment = \"harnack\"\n[exponents]\np = 2.0\nq = 2.0\n";
        let e = errors(text, true);
        assert_eq!(e.len(), 1);
        assert!(e[0].contains("1/p + 1/q < 2/d"));
        let ok = parse_config(&format!("failure_regime = true\n{text}"), true).unwrap();
        assert!(ok.config.failure_regime);
    }

    #[test]
    fn unknown_keys_are_errors_only_in_strict_mode() {
        let text = "experiment = \"diagonal\"\ncolour = 3\n[cylinder]\nradius = 4.0\nwidth = 2\n";
        let e = errors(text, true);
        assert_eq!(e.len(), 2);
        let lax = parse_config(text, false).unwrap();
        assert_eq!(lax.warnings.len(), 2);
    }

    #[test]
    fn every_problem_is_reported() {
        let text = "experiment = \"clt-sweep\"\n[cylinder]\nradius = -1.0\ndelta = 2.0\n[clt]\nepsilons = [0.5, 1.0]\n[solver]\ntolerance = 0.0\n";
        let e = errors(text, true);
        assert_eq!(e.len(), 4, "{e:?}");
    }

    #[test]
    fn type_errors_are_collected_per_table() {
        let text = "experiment = \"harnack\"\nseed = \"x\"\n[cylinder]\nradius = \"big\"\n[clt]\ntimes = 1.5\n";
        assert_eq!(errors(text, true).len(), 3);
    }

    #[test]
    fn unknown_model_and_experiment() {
        assert_eq!(errors("experiment = \"nope\"\n", true).len(), 1);
        let e = errors("experiment = \"env-gen\"\n[environment]\nmodel = \"marble\"\n", true);
        assert!(e[0].contains("marble"));
    }
}
