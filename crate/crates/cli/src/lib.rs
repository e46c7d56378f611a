//! Library surface of the `noether-dt` command-line tool: configuration
//! parsing, CSV interchange, report rendering, and command execution. The
//! binary in `main.rs` is a thin wrapper; integration tests drive these
//! pieces directly.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod report;
