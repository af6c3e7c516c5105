use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: degenerate input (row {row} has norm {norm:e})")]
    DegenerateInput {
        op: &'static str,
        row: usize,
        norm: f64,
    },

    #[error("degenerate proxy for episode class {class}: averaged norm {norm:e}")]
    DegenerateProxy { class: usize, norm: f64 },

    #[error("{op}: index {index} out of range for {bound} classes")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("training aborted at step {step} (lr {lr}): {reason}")]
    Aborted { step: u64, lr: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
