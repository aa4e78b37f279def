//! File formats, configuration files, and command implementations behind
//! the `vsr` binary.  Everything here is std-side plumbing; the numerical
//! work lives in `vsr-core`.

pub mod commands;
pub mod config;
pub mod corpus_io;
pub mod formats;
pub mod report;

/// Map an error to the process exit code contract: 2 for configuration
/// problems, 3 for data problems (missing or malformed files, impossible
/// alignments), 4 for numerical failures.
pub fn exit_code(e: &vsr_core::Error) -> i32 {
    use vsr_core::Error::*;
    match e {
        Config(_) => 2,
        Data(_) | Shape(_) | InfeasibleAlignment { .. } => 3,
        Numeric(_) => 4,
    }
}
