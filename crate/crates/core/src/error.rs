use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),

    #[error("volume data length {actual} does not match geometry (expected {expected})")]
    DataLength { expected: usize, actual: usize },

    #[error("malformed volume header {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("volume payload {path} holds {actual} values, header requires {expected}")]
    PayloadSize {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported dtype `{dtype}` for volume kind `{kind}`")]
    UnsupportedDtype { kind: String, dtype: String },

    #[error("expected a `{expected}` volume, found `{found}`")]
    KindMismatch { expected: String, found: String },

    #[error("mask value {value} at voxel {index} is not 0 or 1")]
    InvalidMaskValue { index: usize, value: u8 },

    #[error("non-finite tensor component")]
    NonFinite,

    #[error("invalid acquisition: {0}")]
    InvalidAcquisition(String),

    #[error("gradient design matrix is rank deficient")]
    RankDeficient,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("phantom tube does not fit in the grid: {0}")]
    TubeDoesNotFit(String),

    #[error("tracking seed ({x:.3}, {y:.3}, {z:.3}) mm lies outside the volume")]
    SeedOutside { x: f64, y: f64, z: f64 },

    #[error("empty bundle: no fibers survived ROI filtering")]
    EmptyBundle,

    #[error("invalid centerline: {0}")]
    InvalidCenterline(String),

    #[error("degenerate frame at layer {layer}: transported normal is parallel to the tangent")]
    DegenerateFrame { layer: usize },

    #[error("centerline point {layer} lies outside the volume")]
    CenterlineOutside { layer: usize },

    #[error("degenerate triangles at boundary entries (layer, ray): {0:?}")]
    DegenerateTriangles(Vec<(usize, usize)>),

    #[error("mesh is empty")]
    EmptyMesh,

    #[error("malformed PLY: {0}")]
    MalformedPly(String),

    #[error("no clean ray direction for voxel {index} after {tries} attempts")]
    NoCleanRay { index: usize, tries: usize },

    #[error("mask geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
