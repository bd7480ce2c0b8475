//! Library side of the `ubp` command-line tool.

pub mod commands;
pub mod config;
pub mod manifest;

use ubp_core::Error;

/// Process exit status for an error: 2 configuration, 3 missing or unreadable input, 4 numerical.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::MissingInput(_) | Error::Parse { .. } | Error::Integrity { .. } | Error::Io { .. } => 3,
        Error::Numerical(_) | Error::DegenerateInput(_) => 4,
    }
}
