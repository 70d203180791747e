use std::path::PathBuf;

use thiserror::Error;

use crate::domain::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frames from more than one session: {first:?} and {other:?}")]
    MixedSession { first: String, other: String },

    #[error("{modality:?} timestamps decrease at {time_s} s (previous {previous_s} s)")]
    NonMonotonicTime {
        modality: Modality,
        time_s: f64,
        previous_s: f64,
    },

    #[error("{path}:{line}: {reason}")]
    Schema {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: {modality:?} row has {found} numeric fields, expected {expected}")]
    PointCount {
        path: String,
        line: usize,
        modality: Modality,
        expected: usize,
        found: usize,
    },

    #[error("session {session_id}: labels file missing ({})", path.display())]
    MissingLabels { session_id: String, path: PathBuf },

    #[error("session {session_id}: frames file missing ({})", path.display())]
    MissingFrames { session_id: String, path: PathBuf },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("landmark index {index} out of range for {len} points")]
    Index { index: usize, len: usize },

    #[error("scale length {0} is below the degeneracy threshold")]
    DegenerateScale(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("window contains no bins")]
    EmptyWindow,

    #[error("window of {len} bins ending at bin {end_bin} does not fit in {n_bins} bins")]
    WindowOutOfRange {
        end_bin: usize,
        len: usize,
        n_bins: usize,
    },

    #[error("session {session_id} has {n_bins} bins, fewer than the {required} needed for one sample")]
    SessionTooShort {
        session_id: String,
        n_bins: usize,
        required: usize,
    },

    #[error("need at least 2 values per sample, got {a} and {b}")]
    InsufficientData { a: usize, b: usize },

    #[error("fold {fold}: training data has {alert} alert and {fussy} fussy samples")]
    SingleClassFold {
        fold: usize,
        alert: usize,
        fussy: usize,
    },

    #[error("scores contain a single class")]
    SingleClass,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model file version {found} is newer than supported version {supported}")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("corrupt model file: {0}")]
    CorruptFile(String),

    #[error("need at least {k} infants for {k}-fold cross-validation, got {found}")]
    TooFewInfants { k: usize, found: usize },

    #[error("need at least 3 embeddings with width >= 2, got {n} of width {width}")]
    PcaInput { n: usize, width: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
