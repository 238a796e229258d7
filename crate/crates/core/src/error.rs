use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report. Each variant carries a stable code via [`Error::code`]
/// so that the service and CLI can surface it without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse manifest {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u64),
    #[error("referenced file for {entry} does not exist: {path}")]
    MissingFile { entry: String, path: PathBuf },
    #[error("learner {learner}: manifest declares dim {declared} but file has {found}")]
    DimMismatch {
        learner: String,
        declared: usize,
        found: usize,
    },
    #[error("{what}: expected {expected} rows, found {found}")]
    RowMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate {kind} `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("bad magic in {path}: expected FSD1")]
    BadMagic { path: PathBuf },
    #[error("truncated feature file {path}: expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("row {row} of {path} is all zeros and cannot be normalized")]
    ZeroRow { path: PathBuf, row: usize },
    #[error("ground truth {path}: {message}")]
    GroundTruth { path: PathBuf, message: String },
    #[error("shot set is empty")]
    EmptyShots,
    #[error("no learner is selected")]
    NoSelectedLearners,
    #[error("ensemble weights sum to zero")]
    ZeroWeights,
    #[error("unknown learner `{0}`")]
    UnknownLearner(String),
    #[error("no ground truth loaded")]
    NoGroundTruth,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("problem has {rows} rows; the exhaustive oracle is limited to {max_rows}")]
    TooManyRows { rows: usize, max_rows: usize },
    #[error("assignment of column {column} references unselected row {row}")]
    UnselectedAssignment { column: usize, row: usize },
    #[error("edit rejected: {0}")]
    EditRejected(String),
    #[error("state changed: expected {expected}, current {current}")]
    StaleState { expected: String, current: String },
    #[error("cannot remove `{0}`: it is the only selected learner")]
    SoleLearner(String),
    #[error("weight cannot be moved {direction} from {weight}")]
    InfeasibleDirection { direction: &'static str, weight: f64 },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::ManifestParse { .. } => "manifest_parse",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::MissingFile { .. } => "missing_file",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::RowMismatch { .. } => "row_mismatch",
            Error::Duplicate { .. } => "duplicate_id",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::ZeroRow { .. } => "zero_row",
            Error::GroundTruth { .. } => "ground_truth",
            Error::EmptyShots => "empty_shots",
            Error::NoSelectedLearners => "no_selected_learners",
            Error::ZeroWeights => "zero_weights",
            Error::UnknownLearner(_) => "unknown_learner",
            Error::NoGroundTruth => "no_ground_truth",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite(_) => "non_finite",
            Error::TooManyRows { .. } => "too_many_rows",
            Error::UnselectedAssignment { .. } => "unselected_assignment",
            Error::EditRejected(_) => "edit_rejected",
            Error::StaleState { .. } => "stale_state",
            Error::SoleLearner(_) => "sole_learner",
            Error::InfeasibleDirection { .. } => "infeasible_direction",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
