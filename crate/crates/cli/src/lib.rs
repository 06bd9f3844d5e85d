//! Batch front end for the `sparse-bayes` crate.
//!
//! Exit codes: 1 for usage errors, 2 for data errors, 3 for numerical failures.

pub mod args;
pub mod commands;
pub mod error;
pub mod model;

pub use error::CliError;
pub use model::ModelFile;

use std::io::Write;

use args::{Cli, Command};

pub fn run(cli: &Cli, out: &mut impl Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit(a) => commands::cmd_fit(a, out),
        Command::Predict(a) => commands::cmd_predict(a, out),
        Command::BenchSinc1d(a) => commands::cmd_bench(a, false, out),
        Command::BenchSinc2d(a) => commands::cmd_bench(a, true, out),
        Command::Select(a) => commands::cmd_select(a, out),
    }
}
