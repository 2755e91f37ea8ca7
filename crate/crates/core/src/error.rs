use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trace")]
    EmptyTrace,

    #[error("trace too short: {len} downsampled points, window needs {window}")]
    TraceTooShort { len: usize, window: usize },

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("non-finite gradient in `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error(
        "window size {size} is not a multiple of the pooling product {multiple} \
         (nearest valid sizes: {below}, {above})"
    )]
    InvalidWindowSize {
        size: usize,
        multiple: usize,
        below: usize,
        above: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid interval [{start}, {end}): {reason}")]
    InvalidInterval {
        start: usize,
        end: usize,
        reason: &'static str,
    },

    #[error("overlapping annotations: [{first_start}, {first_end}) and [{second_start}, {second_end})")]
    OverlappingAnnotations {
        first_start: usize,
        first_end: usize,
        second_start: usize,
        second_end: usize,
    },

    #[error("unordered annotations: interval starting at {start} follows one starting at {previous}")]
    UnorderedAnnotations { previous: usize, start: usize },

    #[error("no positive examples")]
    NoPositiveExamples,

    #[error("run `{run_id}` leaked into the {partition} partition")]
    Leakage { run_id: String, partition: &'static str },

    #[error("need at least 3 runs to split, got {0}")]
    TooFewRuns(usize),

    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite_epoch:?})")]
    Diverged {
        epoch: usize,
        last_finite_epoch: Option<usize>,
    },

    #[error("infeasible layout: {0}")]
    InfeasibleLayout(String),

    #[error("missing metadata: {0}")]
    MissingMetadata(&'static str),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("not a trace file")]
    NotATraceFile,

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file at byte {offset}: {what}")]
    Truncated { offset: usize, what: &'static str },

    #[error("corrupt weights: {0}")]
    CorruptWeights(String),

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
