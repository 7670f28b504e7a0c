//! Configuration, checkpoint files and the experiment workflow behind the
//! `adbn` command.

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod synthetic;
pub mod workflow;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, Overrides};

use adbn_core::Error;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Precondition(_) => 2,
        Error::Data(_) | Error::Io { .. } => 3,
        Error::Divergence(_) => 4,
    }
}
