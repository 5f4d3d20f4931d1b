use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("clip is empty after silence trimming")]
    EmptyClip,
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedRate(u32),
    #[error("spectrogram has {frames} frames, need at least {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("empty list")]
    EmptyList,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least two points, got {0}")]
    InsufficientPoints(usize),

    #[error("empty stream")]
    EmptyStream,
    #[error("non-finite value {0}")]
    NonFiniteValue(f64),

    #[error("parameter shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("no label available for sample {0}")]
    OracleFailure(String),
    #[error("requested {requested} samples from a batch of {available}")]
    NTooLarge { requested: usize, available: usize },

    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("parse error at row {row}{}: {message}", column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        row: usize,
        column: Option<String>,
        message: String,
    },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("too few subjects: {0}")]
    TooFewSubjects(String),
    #[error("subject {subject} appears in both {first} and {second}")]
    SubjectOverlap {
        subject: String,
        first: &'static str,
        second: &'static str,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn parse(row: usize, column: Option<&str>, message: impl Into<String>) -> Self {
        Error::Parse {
            row,
            column: column.map(str::to_owned),
            message: message.into(),
        }
    }

    /// Name of the pipeline stage that failed, when known.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e.into() {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}
