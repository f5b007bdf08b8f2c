//! Library behind the `coe` binary, exposed so tests can drive each
//! subcommand without spawning a process.

pub mod analyze;
pub mod app;
pub mod bench;
pub mod chat;
pub mod simulate;

pub use app::{run, Cli, Outcome};
