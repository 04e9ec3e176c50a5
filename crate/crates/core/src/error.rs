use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front-ends to pick exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    InsufficientData,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("empty region of interest")]
    EmptyRoi,

    #[error("no signal in band")]
    NoSignal,

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("no peak within {tolerance_s} s of t={t}")]
    PeakNotFound { t: f64, tolerance_s: f64 },

    #[error("edit rejected: {0}")]
    EditRejected(String),

    #[error("version conflict: expected {expected}, current {current}")]
    VersionConflict { expected: u64, current: u64 },

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
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self.root() {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Json(_)
            | Error::EditRejected(_)
            | Error::PeakNotFound { .. } => ErrorKind::Validation,
            Error::InsufficientData(_) => ErrorKind::InsufficientData,
            _ => ErrorKind::Runtime,
        }
    }
}
