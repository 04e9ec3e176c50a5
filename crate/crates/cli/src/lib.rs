//! Front end for `pulse-core`: subcommand implementations and the
//! annotation HTTP server.

pub mod commands;
pub mod server;

use pulse_core::{Error, ErrorKind};

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::InsufficientData => 3,
        ErrorKind::Runtime => 4,
    }
}

pub fn kind_label(err: &Error) -> &'static str {
    match err.kind() {
        ErrorKind::Validation => "validation",
        ErrorKind::InsufficientData => "insufficient-data",
        ErrorKind::Runtime => "runtime",
    }
}
