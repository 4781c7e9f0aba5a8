use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error in record {record}: {msg}")]
    Validation { record: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("training error at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("query error: {0}")]
    Query(String),

    #[error("retrieval error: {0}")]
    Retrieval(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),
}

pub type Result<T> = std::result::Result<T, Error>;
