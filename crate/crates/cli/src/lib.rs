//! Command-line surface for ctxcomp.
//!
//! `compress` adds compressed documents to JSONL records, `generate` sends the
//! compressed prompts to an OpenAI-compatible endpoint, `eval` scores
//! predictions, `sweep` moves the gold document through the ranks. `prompts`
//! and `record` help produce attention files for the recorded provider.
//!
//! Exit codes: 0 success, 2 invalid input or flags, 3 provider or endpoint
//! failure, 1 anything else (mostly I/O on the output side).

pub mod cli;
pub mod commands;
pub mod config;
pub mod generate;
pub mod jsonl;
pub mod remote;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("record {record}: {message}")]
    Provider { record: String, message: String },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Provider { .. } => EXIT_PROVIDER,
            CliError::Io(_) => EXIT_FAILURE,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        CliError::Validation(message.into())
    }
}
