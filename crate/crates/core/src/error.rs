use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: columns are parallel")]
    DegenerateRotation,
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("invalid primitive dimensions: {0}")]
    InvalidDimensions(String),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("degenerate triangle (face {face}, area {area})")]
    DegenerateTriangle { face: usize, area: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("all anchors are frozen; no force can be exerted")]
    AllAnchorsFrozen,
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("ODE step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("non-finite ODE state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("bad heatmap channel {channel} (stack has {channels})")]
    BadChannel { channel: usize, channels: usize },
    #[error("unknown scenario template: {0}")]
    UnknownTemplate(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("schema version mismatch: expected {expected}, got {got}")]
    VersionError { expected: String, got: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
