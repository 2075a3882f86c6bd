use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("JSON parse error at byte {offset} (line {line}, column {column}): {detail}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        detail: String,
    },

    #[error("data integrity: {0}")]
    Integrity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// Builds a parse error from serde_json's line/column by locating the byte
    /// offset in the original text.
    pub(crate) fn from_json(err: serde_json::Error, text: &str) -> Self {
        let (line, column) = (err.line(), err.column());
        let offset = if line == 0 {
            0
        } else {
            text.split_inclusive('\n')
                .take(line - 1)
                .map(str::len)
                .sum::<usize>()
                + column.saturating_sub(1)
        };
        Error::Parse {
            offset,
            line,
            column,
            detail: err.to_string(),
        }
    }
}
