use thiserror::Error;

/// Problems with the bytes of an input file or config, before any
/// cross-record validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("missing column \"{0}\"")]
    MissingColumn(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("input is not valid UTF-8 (line {line})")]
    EncodingError { line: usize },
    #[error("duplicate {kind} id \"{id}\" at line {line}")]
    DuplicateId {
        kind: &'static str,
        id: String,
        line: usize,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid {what}: {reason}")]
    InvalidDocument { what: &'static str, reason: String },
}
