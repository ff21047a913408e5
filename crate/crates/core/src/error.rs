use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty ball (center {center}, radius {radius})")]
    EmptyBall { center: usize, radius: f64 },

    #[error("moment condition violated: {0}")]
    Condition(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("torus guard violated: {0}")]
    TorusGuard(String),

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("degenerate cylinder: {0}")]
    DegenerateCylinder(String),

    #[error("malformed data file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("stage {stage} failed: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error("missing inputs: {}", .0.join(", "))]
    MissingInputs(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
