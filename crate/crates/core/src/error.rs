//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json parse error in {path} at byte {offset} (line {line}, column {column}): {message}")]
    JsonParse {
        path: String,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("lex error at byte {position}: {message}")]
    Lex { position: usize, message: String },

    #[error("normalization error: unresolved alias(es): {}", aliases.join(", "))]
    UnresolvedAlias { aliases: Vec<String> },

    #[error("normalization error: {0}")]
    Normalize(String),

    #[error("decomposition error: unsupported construct `{0}`")]
    UnsupportedConstruct(String),

    #[error("decomposition error: {0}")]
    Decompose(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("score/label coverage mismatch: {0}")]
    Coverage(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("database error: {0}")]
    Database(#[from] rusqlite::Error),

    #[error("remote request failed after {attempts} attempts: {message}")]
    Remote { attempts: u32, message: String },

    #[error("remote protocol error: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Build a `JsonParse` from a serde error, recovering the byte offset
    /// of the failure from its line/column against the source text.
    pub fn from_json(path: &str, text: &str, err: &serde_json::Error) -> Self {
        let (line, column) = (err.line(), err.column());
        let mut offset = 0usize;
        for (i, l) in text.split('\n').enumerate() {
            if i + 1 == line {
                offset += column.saturating_sub(1);
                break;
            }
            offset += l.len() + 1;
        }
        Error::JsonParse {
            path: path.to_string(),
            offset,
            line,
            column,
            message: err.to_string(),
        }
    }
}
