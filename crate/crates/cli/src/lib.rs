//! Command-line front end: simulate recordings, track them, compare the
//! result with ground truth and run the static precision sweep.

pub mod commands;
pub mod config;
pub mod metrics;

pub use config::{AppConfig, ConfigError, Finding, Level, Resolved};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

/// Exit code for an error: configuration problems anywhere in the chain
/// map to [`exit::CONFIG`], everything else to [`exit::RUNTIME`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        exit::CONFIG
    } else {
        exit::RUNTIME
    }
}
