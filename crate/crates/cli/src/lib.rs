//! Command-line surface: config files, embedding formats, and the
//! train/diffuse/eval/gradcheck/sweep subcommands.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::ffi::OsString;

use clap::Parser;

use crate::commands::{dispatch, Cli};
use crate::error::{CliError, EXIT_OK, EXIT_VALIDATION};

/// Parses `args`, runs the command, and returns the process exit code.
/// Failures print a JSON error record on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let record = CliError::Validation(e.kind().to_string()).record();
            eprintln!("{}", serde_json::to_string(&record).expect("record serializes"));
            let _ = e.print();
            return EXIT_VALIDATION;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.record()).expect("record serializes"));
            e.exit_code()
        }
    }
}
