use std::io;

use thiserror::Error;

use crate::field::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },

    #[error("trace miss: no recorded {branch} velocity for step {step} (occurrence {occurrence})")]
    TraceMiss {
        step: u32,
        branch: &'static str,
        occurrence: usize,
    },

    #[error("trace mismatch at step {step}: {detail}")]
    TraceMismatch { step: u32, detail: String },

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },

    #[error("remote error: {0}")]
    Remote(String),

    #[error("numeric failure in {term}: {detail}")]
    Numeric { term: &'static str, detail: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, unwrapping step context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for the failure class.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } | Error::Config(_) => 2,
            Error::Io(_) | Error::Parse { .. } | Error::TraceMiss { .. } | Error::TraceMismatch { .. } => 3,
            Error::Transport { .. } | Error::Remote(_) => 4,
            Error::Numeric { .. } => 5,
            Error::AtStep { .. } => unreachable!("root() unwraps step context"),
        }
    }
}
