use std::io;

use thiserror::Error;

/// Errors surfaced by the overlap pipeline and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("FASTQ parse error at record {record}: {reason}")]
    Parse { record: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("exchange failure on rank {rank}: {reason}")]
    Exchange { rank: usize, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed wire record: {0}")]
    Wire(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
