use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("azimuth {azimuth} rad outside [{min}, {max}]")]
    AzimuthOutOfRange { azimuth: f64, min: f64, max: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("subcarrier {index} out of range (Q = {count})")]
    SubcarrierOutOfRange { index: usize, count: usize },

    #[error("channel has no paths")]
    EmptyChannel,

    #[error("target vehicle outside camera field of view (azimuth {azimuth} rad)")]
    TargetOutsideFov { azimuth: f64 },

    #[error("not enough points: need at least {needed}, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },

    #[error("no detection intersects the localization window")]
    NoDetectionInWindow,

    #[error("wrong input shape: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("backward called before a forward pass was recorded")]
    NoForwardPass,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("config hash mismatch: {0} vs {1}")]
    ConfigHashMismatch(String, String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::AzimuthOutOfRange { .. } => "azimuth_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::SubcarrierOutOfRange { .. } => "subcarrier_out_of_range",
            Error::EmptyChannel => "empty_channel",
            Error::TargetOutsideFov { .. } => "target_outside_fov",
            Error::NotEnoughPoints { .. } => "not_enough_points",
            Error::NoDetectionInWindow => "no_detection_in_window",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NoForwardPass => "no_forward_pass",
            Error::EmptyDataset => "empty_dataset",
            Error::Diverged { .. } => "diverged",
            Error::InvalidInput(_) => "invalid_input",
            Error::Malformed { .. } => "malformed",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::UnknownScenario(_) => "unknown_scenario",
            Error::ConfigHashMismatch(..) => "config_hash_mismatch",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
