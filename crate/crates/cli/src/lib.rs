//! Command-line front end: response-file IO, run manifests and the
//! `fit`, `se`, `simulate` and `influence` commands.
//!
//! Exit codes: `0` success, `1` input or configuration error, `2` numerical
//! failure or non-convergence (results are still written).

pub mod commands;
pub mod error;
pub mod format;
pub mod io;
pub mod manifest;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
pub use io::{load_responses, parse_responses, save_responses, write_responses};
pub use manifest::{Report, RunManifest};
