//! Run configuration, orchestration, manifests and plot data.

mod config;
mod manifest;
mod plot;
mod run;

pub use config::{
    parse_config, AuditConfig, CltConfig, CylinderConfig, DiagonalConfig, EnvironmentConfig, Experiment, ExponentConfig,
    OscillationConfig, ParsedConfig, RunConfig, SolverConfig,
};
pub use manifest::{
    sha256_hex, ArtifactWriter, OutputRecord, Residual, RunManifest, StageRecord, StageStatus, FAILED_MARKER, MANIFEST_FILE,
};
pub use plot::{emit_plot_data, histogram, plot_files, HISTOGRAM_BINS};
pub use run::{
    error_code, exit_code, random_origins, run, CltSummary, DiagonalOutput, EnvironmentSummary, CLT_TREND_TOLERANCE,
};
