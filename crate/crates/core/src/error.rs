use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tree growth from {root} stalled at level {level} (node {node}): {leaves} leaves, need {needed}")]
    TreeStalled {
        root: usize,
        level: usize,
        node: usize,
        leaves: usize,
        needed: usize,
    },

    #[error("only {found} paths between {u} and {v}, need at least {needed}")]
    TooFewPaths {
        u: usize,
        v: usize,
        found: usize,
        needed: usize,
    },

    #[error("missing edge ({0}, {1}) in query graph")]
    MissingEdge(usize, usize),

    #[error("malformed graph text at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
