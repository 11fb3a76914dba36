//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("value {value} cannot be represented in {format}")]
    RangeOverflow { format: &'static str, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid depth map: {0}")]
    InvalidMap(String),

    #[error("camera intrinsics required for {0} but not present")]
    MissingIntrinsics(&'static str),

    #[error("depth kind conversion hit a non-positive value {value} at pixel ({x}, {y})")]
    NonPositiveDepth { value: f64, x: usize, y: usize },

    #[error("map too small: {0}")]
    MapTooSmall(String),

    #[error("light direction is not unit length (|e| = {0})")]
    NonUnitLight(f64),

    #[error("light rig is not orthonormal: {0}")]
    NonOrthonormalRig(String),

    #[error("no jointly valid pixels")]
    EmptyIntersection,

    #[error("window of size {window} does not fit a {width}x{height} image")]
    WindowTooLarge {
        window: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimensions {width}x{height} are not divisible by {divisor}")]
    NotDivisible {
        width: usize,
        height: usize,
        divisor: usize,
    },

    #[error("degenerate variance: correlation undefined")]
    DegenerateVariance,

    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("auto weight undefined: {0} term of the initial pair is zero")]
    AutoWeightDegenerate(&'static str),

    #[error("objective became non-finite at iteration {0}; weights are likely too large")]
    Diverged(usize),

    #[error("invalid scene parameters: {0}")]
    InvalidScene(String),

    #[error("invalid run config: {0}")]
    InvalidConfig(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
