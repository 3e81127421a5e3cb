use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unrecognized pairwise answer: {0:?}")]
    UnrecognizedFormat(String),
    #[error("subject mismatch in pairwise answer: {first:?} vs {second:?}")]
    SubjectMismatch { first: String, second: String },
    #[error("winner and loser index are both {0}")]
    IndexClash(u64),
    #[error("score {raw} outside scale [{min}, {max}]")]
    OutOfRange { raw: f64, min: f64, max: f64 },
    #[error("no ratings to aggregate")]
    EmptyRatings,
    #[error("element {0:?} has no votes")]
    EmptyVotes(String),
    #[error("tied vote counts ({0} each)")]
    TiedVotes(u64),
    #[error("records refer to different prompts: {expected:?} vs {found:?}")]
    PromptMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: bad or missing field `{field}`")]
    Schema { line: usize, field: String },
    #[error("no task head for {0}")]
    UnknownTask(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty batch")]
    EmptyBatch,
    #[error("candidate pool of size {0} cannot be split into pairs")]
    OddPool(usize),
    #[error("empty candidate pool")]
    EmptyPool,
    #[error("empty {0} list")]
    EmptyList(&'static str),
    #[error("duplicate candidate id {0:?}")]
    DuplicateId(String),
    #[error("unresolved id {0:?}")]
    UnresolvedId(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("timestep {t} outside 1..={horizon}")]
    TimestepOutOfRange { t: usize, horizon: usize },
    #[error("invalid config `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("malformed matrix file: {0}")]
    MatrixFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(line: usize, field: impl Into<String>) -> Self {
        Error::Schema {
            line,
            field: field.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
