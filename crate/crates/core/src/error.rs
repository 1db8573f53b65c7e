use std::path::PathBuf;

use crate::ica::IcaModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("body of {path} holds {actual} bytes, header declares {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("non-finite value at flat index {index}")]
    NonFiniteData { index: usize },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("bad NIfTI magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("onsets decrease at row {row}")]
    NonMonotoneOnsets { row: usize },
    #[error("offset precedes onset at row {row}")]
    NegativeDuration { row: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("band ({low}, {high}) Hz invalid for Nyquist {nyquist} Hz")]
    BandOutOfRange { low: f64, high: f64, nyquist: f64 },
    #[error("confound matrix has {columns} columns for {rows} rows")]
    TooManyConfounds { rows: usize, columns: usize },
    #[error("trimming {head}+{tail} leaves nothing of {len} samples")]
    EmptyAfterTrim { head: usize, tail: usize, len: usize },

    #[error("ICA did not converge after {iterations} iterations (delta {delta:e})")]
    NonConverged {
        iterations: usize,
        delta: f64,
        best: Box<IcaModel>,
    },
    #[error("data rank too low for {k} components")]
    RankTooLow { k: usize },
    #[error("series mask does not match the model mask")]
    MaskMismatch,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("word at {time} s lies past the end of the run ({end} s)")]
    WordPastEnd { time: f64, end: f64 },
    #[error("word table carries neither surprisal nor probabilities")]
    MissingSurprisal,
    #[error("non-positive probability {p} at row {row}")]
    NonPositiveProbability { row: usize, p: f64 },
    #[error("regressor is degenerate (constant)")]
    DegenerateRegressor,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),
    #[error("too few rows: {rows} rows for {folds} folds")]
    TooFewRows { rows: usize, folds: usize },
    #[error("parcel `{0}` has no voxels inside the mask")]
    EmptyParcel(String),

    #[error("constant input to correlation")]
    ConstantInput,
    #[error("source map is all zero")]
    AllZeroSource,
    #[error("temporal matching needs a shared test story: {0}")]
    NoSharedStory(String),
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("network `{0}` could not be resolved from the atlas")]
    NetworkUnresolved(String),

    #[error("synthetic layout does not fit the grid: {0}")]
    OverlapInfeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::OverlapInfeasible(_) => ErrorKind::Config,
            Error::NonConverged { .. }
            | Error::RankTooLow { .. }
            | Error::DegenerateRegressor
            | Error::ConstantInput
            | Error::NonFiniteInput(_) => ErrorKind::Numerical,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
