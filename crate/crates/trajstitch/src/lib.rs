//! IO, file formats, configuration, and the pipeline commands behind the
//! `trajstitch` binary. The numeric core lives in `trajstitch-core`; this
//! crate owns everything that touches the filesystem.

pub mod commands;
pub mod config;
pub mod formats;

pub use commands::{cmd_eval, cmd_gen_data, cmd_run_all, cmd_stitch, cmd_sweep, cmd_train};
pub use commands::{AppError, SweepParam};
pub use config::RunConfig;
