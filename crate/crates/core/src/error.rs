use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("variable does not belong to this graph")]
    ForeignVar,

    #[error("token {token} outside vocabulary of size {vocab}")]
    OutOfVocab { token: u32, vocab: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target of {target} symbols exceeds budget of {budget} for {frames} frames")]
    TargetTooLong {
        target: usize,
        frames: usize,
        budget: usize,
    },

    #[error("bad weight file: {0}")]
    WeightFormat(String),

    #[error("tensor `{name}` has shape {found:?}, config expects {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("unknown word piece in `{0}`")]
    UnknownPiece(String),

    #[error("stage {requested} requested but last completed stage is {completed}")]
    StageOrder { requested: u8, completed: u8 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures of the numeric guard (NaN/Inf), as opposed to data or usage errors.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
