//! Experiment orchestration: run configuration, artifact persistence,
//! command implementations, and the CLI entry point.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;

pub use artifacts::{
    file_hash, load_denoiser, load_student, save_denoiser, sha256_hex, write_manifest,
};
pub use cli::cli_main;
pub use commands::{
    cmd_distill, cmd_mc, cmd_metrics, cmd_plan_eval, cmd_replay, cmd_sample, cmd_train, on_dest,
    run_command, Ctx,
};
pub use config::{
    CampaignSection, DistillSection, MetricsSection, PlannerSection, RunConfig, SimSection,
    TeacherSection,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("missing artifact {path}; produce it with the `{producer}` command first")]
    MissingArtifact { path: String, producer: String },
    #[error("pipeline: {0}")]
    Pipeline(String),
}
