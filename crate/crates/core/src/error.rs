use std::path::PathBuf;

/// Errors produced by the mapping library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate rectangle [{x_min}, {x_max}] x [{y_min}, {y_max}] has no area")]
    DegenerateRect {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },

    #[error("invalid kernel hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid tree configuration: {0}")]
    InvalidTreeConfig(String),

    #[error("node {0} is not a live node of this tree")]
    UnknownNode(usize),

    #[error("node {parent} cannot be pruned: {reason}")]
    PruneNotEligible { parent: usize, reason: &'static str },

    #[error("measurement references cell {cell} but the map has {leaf_count} cells")]
    UnknownCell { cell: usize, leaf_count: usize },

    #[error("cell {0} is measured more than once in a single update")]
    DuplicateMeasurement(usize),

    #[error("invalid measurement for cell {cell}: {reason}")]
    InvalidMeasurement { cell: usize, reason: &'static str },

    #[error("innovation covariance of {size}x{size} is not positive definite")]
    SingularInnovation { size: usize },

    #[error("invalid sensor configuration: {0}")]
    InvalidSensorConfig(String),

    #[error("sensor footprint at ({x}, {y}, {z}) does not intersect the map extent")]
    FootprintOutsideExtent { x: f64, y: f64, z: f64 },

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("region does not contain any ground-truth sample")]
    EmptyRegion,

    #[error("invalid field geometry: {0}")]
    InvalidField(String),

    #[error("{path}: row {row}, column {col}: {msg}")]
    CsvParse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("the ground truth has no hotspot samples")]
    NoHotspots,

    #[error("invalid lattice or flight plan: {0}")]
    InvalidPlan(String),
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
