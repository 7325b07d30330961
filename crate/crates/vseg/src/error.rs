use thiserror::Error;

/// The axis names used in shape-mismatch errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channel,
    Depth,
    Height,
    Width,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Axis::Batch => "batch",
            Axis::Channel => "channel",
            Axis::Depth => "depth",
            Axis::Height => "height",
            Axis::Width => "width",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {axis} axis mismatch (expected {expected}, got {got})")]
    ShapeMismatch {
        op: &'static str,
        axis: Axis,
        expected: usize,
        got: usize,
    },

    #[error("{op}: shapes {a} and {b} are not broadcast-compatible")]
    NotBroadcastable {
        op: &'static str,
        a: String,
        b: String,
    },

    #[error("{op}: invalid spec: {reason}")]
    InvalidSpec { op: &'static str, reason: String },

    #[error("{op}: effective kernel extent exceeds padded input on {axis} axis (input {input}, needs {needed})")]
    EmptyOutput {
        op: &'static str,
        axis: Axis,
        input: usize,
        needed: usize,
    },

    #[error("config field `{field}` is invalid: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("spatial extents ({d}, {h}, {w}) must each be divisible by {divisor}; pad the volume before inference")]
    SpatialNotDivisible {
        d: usize,
        h: usize,
        w: usize,
        divisor: usize,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("graph node {0} expected a scalar value")]
    NonScalarLoss(usize),

    #[error("backward called on an empty graph")]
    EmptyGraph,

    #[error("non-finite loss at step {step} ({value})")]
    NonFiniteLoss { step: u64, value: f64 },

    #[error("{path}: {what}")]
    FormatCorrupt { path: String, what: String },

    #[error("checkpoint parameter `{name}` does not match the configured network: {reason}")]
    CheckpointMismatch { name: String, reason: String },

    #[error("missing reference for case `{0}`")]
    MissingReference(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
