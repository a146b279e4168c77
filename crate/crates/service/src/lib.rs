//! Command-line and HTTP front ends for the comixification pipeline.

pub mod api;
pub mod jobs;
pub mod train;

use comixify_core::pipeline::{Stage, StageError};
use comixify_core::Error;

/// How a failed run is reported to callers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    /// Bad request parameters or input that does not fit them.
    Invalid,
    TooLarge,
    Undecodable,
    /// The remote video could not be fetched.
    Upstream,
    Internal,
}

pub fn classify(e: &StageError) -> Failure {
    match (&e.error, e.stage) {
        (Error::Constraint(_), _) => Failure::Invalid,
        (Error::Precondition(_), Stage::Validate | Stage::Fetch) => Failure::Invalid,
        (Error::Oversize { .. }, _) => Failure::TooLarge,
        (Error::Decode { .. }, _) => Failure::Undecodable,
        (Error::EmptyInput(_), Stage::Ingest) => Failure::Undecodable,
        (Error::Fetch(_), _) => Failure::Upstream,
        _ => Failure::Internal,
    }
}

impl Failure {
    pub fn http_status(self) -> u16 {
        match self {
            Failure::Invalid => 400,
            Failure::TooLarge => 413,
            Failure::Undecodable => 422,
            Failure::Upstream => 502,
            Failure::Internal => 500,
        }
    }

    /// Usage problems exit with 2, everything else with 1.
    pub fn exit_code(self) -> i32 {
        match self {
            Failure::Invalid => 2,
            _ => 1,
        }
    }
}
