use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate tangent point: radius {radius} mm is below the minimum representable radius")]
    DegeneratePoint { radius: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("image dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("image has zero variance")]
    ZeroVariance,

    #[error("downsample factor {factor} does not divide {width}x{height}")]
    IndivisibleFactor {
        factor: usize,
        width: usize,
        height: usize,
    },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("input has {got} values, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("replay buffer holds {available} transitions, {requested} requested")]
    InsufficientData { requested: usize, available: usize },

    #[error("no demonstrations to learn from")]
    EmptyDemoSet,
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
