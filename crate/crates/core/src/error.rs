use std::path::PathBuf;

/// Errors raised by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed file {path}: {message}")]
    MalformedFile { path: PathBuf, message: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("record `{id}` has label {label} outside the catalog of {n_labels} labels")]
    LabelOutOfRange { id: String, label: usize, n_labels: usize },

    #[error("invalid label catalog: {0}")]
    InvalidCatalog(String),

    #[error("record `{0}` has no label")]
    Unlabeled(String),

    #[error("label {0} has no records")]
    EmptyClass(usize),

    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),

    #[error("invalid template `{id}`: {message}")]
    InvalidTemplate { id: String, message: String },

    #[error("template `{template}` needs at least {needed} characters, budget is {max_chars}")]
    BudgetTooSmall {
        template: String,
        needed: usize,
        max_chars: usize,
    },

    #[error("invalid verbalizer `{id}`: {message}")]
    InvalidVerbalizer { id: String, message: String },

    #[error("no probability given for label word `{0}`")]
    MissingWord(String),

    #[error("invalid scores: {0}")]
    InvalidScores(String),

    #[error("invalid candidates: {0}")]
    InvalidCandidates(String),

    #[error("invalid training data: {0}")]
    InvalidTraining(String),

    #[error("http request to {url} failed after {attempts} attempt(s): {message}")]
    Network {
        url: String,
        attempts: u32,
        message: String,
    },

    #[error("protocol violation from {url}: {message}")]
    Protocol { url: String, message: String },

    #[error("invalid embeddings: {0}")]
    InvalidEmbeddings(String),

    #[error("no embedding for id `{0}`")]
    MissingEmbedding(String),

    #[error("invalid sampling request: {0}")]
    InvalidSampling(String),

    #[error("invalid evaluation input: {0}")]
    InvalidEvaluation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("empty evaluation split")]
    EmptySplit,

    #[error("record `{0}` from validation/test entered the training data")]
    Leakage(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
