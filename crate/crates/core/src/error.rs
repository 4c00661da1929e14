use thiserror::Error;

/// Errors produced by calibration, I/O and the synthetic generator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("projection undefined: point lies on the principal plane (depth {depth:e})")]
    NonFinite { depth: f64 },

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("degenerate minimal configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("no (camera, frame) pair has at least 3 valid joints")]
    NoValidSample,

    #[error("insufficient consensus: inlier ratio {ratio:.4} below required {required:.4}")]
    InsufficientConsensus { ratio: f64, required: f64 },

    #[error("no correspondence with positive depth in the active set")]
    EmptyActiveSet,

    #[error("infeasible rig: radius {rig_radius} m must exceed motion extent {motion_extent} m")]
    InfeasibleRig { rig_radius: f64, motion_extent: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("non-finite value at {location}")]
    NonFiniteValue { location: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
