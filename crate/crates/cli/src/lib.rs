//! Command-line pipeline over the `stnmf` library: ingest, rank scan,
//! factorization, pattern comparison and synthetic data.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

pub use args::{run_cli, Cli, Command, PipelineArgs, SynthArgs};
pub use commands::{
    cmd_factorize, cmd_ingest, cmd_rank_scan, cmd_run, cmd_synth, SynthConfig, INCOMPLETE_MARKER,
};
pub use config::{Period, PipelineConfig};
pub use error::{CliError, CliResult};
