//! Batch driver for the late-fusion pipeline: one TOML file describes a run,
//! each subcommand reads it and writes its artifacts into an output directory.

pub mod commands;
pub mod config;
pub mod data;

pub use commands::{
    cmd_assert, cmd_eval, cmd_fuse, cmd_project, cmd_sweep, cmd_synth, cmd_train, AssertSummary, EvalSummary,
    MethodScore, PredictionSource, SweepAxis, SweepRow, CHECKPOINT_FILE, PREDICTIONS_DIR,
};
pub use config::{ConfigError, LoadedConfig, RunConfig};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Maps a failure to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if cause.downcast_ref::<amvnet_core::Error>().is_some_and(amvnet_core::Error::is_divergence) {
            return EXIT_DIVERGENCE;
        }
    }
    EXIT_DATA
}
