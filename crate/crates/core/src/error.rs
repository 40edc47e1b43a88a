use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),

    #[error("proposal {index}: feature has zero or non-finite norm")]
    ZeroNormFeature { index: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("axis-aligned IoU requires yaw = 0 on both boxes; use iou_bev_rotated for yawed boxes")]
    YawedBox,

    #[error("invalid transport problem: {0}")]
    Transport(String),

    #[error("prototype bank not warmed up: {iteration} of {warmup} iterations")]
    NotWarmedUp { iteration: u64, warmup: u64 },

    #[error("class {class_id}: {source}")]
    InClass {
        class_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("ground truth missing for scene {0}")]
    MissingGroundTruth(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("momentum out of range: mu = {0} not in [0, 1]")]
    MomentumOutOfRange(f64),

    #[error("temperature must be positive: {name} = {value}")]
    NonPositiveTemperature { name: &'static str, value: f64 },

    #[error("threshold {name} = {value} outside [0, 1]")]
    ThresholdOutOfRange { name: &'static str, value: f64 },

    #[error("{0} must be at least 1")]
    ZeroSize(&'static str),

    #[error("unknown config key '{0}'")]
    UnknownKey(String),

    #[error("bad value for '{key}': {value}")]
    BadValue { key: String, value: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}
