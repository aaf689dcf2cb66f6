//! Command-line plumbing for radloc: strict run configs, checkpoints, file
//! formats, SVG plots and the subcommand implementations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod formats;
pub mod gradcheck;
pub mod plot;

use radloc::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonFinite(_) | Error::Shape { .. } | Error::Invalid(_) => EXIT_NUMERICAL,
        Error::Io { .. } | Error::Format { .. } | Error::Json(_) => EXIT_IO,
    }
}
