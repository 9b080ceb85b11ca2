//! Library side of the `hybred` command-line tool: spec loading, the
//! subcommands, report JSON and trajectory CSV.

pub mod commands;
pub mod report;
pub mod spec;
pub mod trajectory;

pub use commands::{compare, reduce, simulate, verify, CliError, Outcome, Overrides};
pub use spec::{load_spec, SystemSpec};
