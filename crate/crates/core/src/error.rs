use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },

    #[error("vertex count too small: {0} (need at least 12)")]
    VertexCountTooSmall(usize),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unknown container version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("blob length mismatch for {array}: {detail}")]
    BlobLengthMismatch { array: String, detail: String },

    #[error("missing blob for array {0}")]
    MissingBlob(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("missing frame {frame} for camera {camera}: {path}")]
    MissingFrame {
        camera: u32,
        frame: usize,
        path: PathBuf,
    },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("no correspondences left after rejection")]
    NoCorrespondences,

    #[error("empty mesh")]
    EmptyMesh,

    #[error("non-unit normal at vertex {vertex}: norm {norm}")]
    NonUnitNormal { vertex: usize, norm: f64 },

    #[error("no valid landmarks")]
    NoValidLandmarks,

    #[error("landmark {0} is behind the camera")]
    LandmarkBehindCamera(usize),

    #[error("no covered pixels")]
    NoCoveredPixels,

    #[error("no pixels valid in both rendered and observed depth")]
    NoValidDepth,

    #[error("unknown region {0:?}")]
    UnknownRegion(String),

    #[error("sequence too short: {found} frames, need at least {needed}")]
    TooFewFrames { found: usize, needed: usize },

    #[error("row {0} of the decoding matrix is all zero")]
    ZeroRow(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stage {stage}, iteration {iteration}: {source}")]
    Stage {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
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

    pub(crate) fn dims(field: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            field,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True when the error stems from malformed or inconsistent input rather
    /// than a numerical failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_input_error(),
            Error::NonFinite(_)
            | Error::NoCorrespondences
            | Error::NoCoveredPixels
            | Error::NoValidDepth
            | Error::LandmarkBehindCamera(_)
            | Error::NoValidLandmarks
            | Error::Degenerate(_) => false,
            _ => true,
        }
    }
}
