use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimensions {n_c}x{n_t} are not multiples of 16 (pad to {padded_n_c}x{padded_n_t})")]
    NotMultipleOf16 {
        n_c: usize,
        n_t: usize,
        padded_n_c: usize,
        padded_n_t: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("batch norm running statistics are uninitialized; train the layer before inference")]
    UninitializedStats,

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("truncated {0}")]
    Truncated(&'static str),

    #[error("symbol checksum mismatch (expected {expected:#010x}, decoded {actual:#010x}); model tables differ or payload is corrupt")]
    Checksum { expected: u32, actual: u32 },

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("zero-norm {0}")]
    ZeroNorm(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
