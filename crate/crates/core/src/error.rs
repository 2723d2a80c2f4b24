use std::path::PathBuf;

use crate::raster::BandId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing band {0}")]
    MissingBand(String),

    #[error("duplicate band {0}")]
    DuplicateBand(BandId),

    #[error("unknown band name {0:?}")]
    UnknownBand(String),

    #[error("inconsistent dimensions: {0}")]
    Dimensions(String),

    #[error("NaN reflectance in band {band} at ({x}, {y})")]
    NanValue { band: String, x: usize, y: usize },

    #[error("unreadable georeferencing: {0}")]
    Georeference(String),

    #[error("unsupported raster encoding: {0}")]
    Unsupported(String),

    #[error("tiff decoding failed: {0}")]
    Tiff(#[from] tiff::TiffError),

    #[error("bad magic: expected \"DSCN\"")]
    BadMagic,

    #[error("bad length: {0}")]
    BadLength(String),

    #[error("invalid window: {0}")]
    Window(String),

    #[error("degenerate histogram: input has fewer than two distinct finite values")]
    DegenerateHistogram,

    #[error("vertex ({x}, {y}) outside extent {width}x{height}")]
    VertexOutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("marker sampling: {0}")]
    Markers(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("scene saturated: no debris-free window found after {draws} draws")]
    SceneSaturated { draws: usize },

    #[error("training data must contain both classes")]
    SingleClass,

    #[error("feature length mismatch: expected {expected}, got {got}")]
    FeatureLength { expected: usize, got: usize },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("scorer contract violation: {0}")]
    ScorerContract(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
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
