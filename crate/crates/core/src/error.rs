use std::path::PathBuf;

use crate::gaussian::GaussianCloud;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("zero quaternion has no rotation")]
    ZeroQuaternion,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported direction count {0}, expected 2 or 4")]
    UnsupportedDirections(usize),

    #[error("clip {clip} references unknown anchor frame {anchor}")]
    DanglingAnchor { clip: usize, anchor: usize },

    #[error("frame {frame_id} missing at {}", path.display())]
    MissingFrame { frame_id: usize, path: PathBuf },

    #[error("frame {frame_id} is {found:?}, expected {expected:?}")]
    ResolutionMismatch {
        frame_id: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("need at least {needed} valid points, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("disconnected plan: frame {0} has no path to the input frame")]
    DisconnectedPlan(usize),

    #[error("inconsistent edge: {0}")]
    InconsistentEdge(String),

    #[error("flat relative depth")]
    FlatRelativeDepth,

    #[error("empty scene")]
    EmptyScene,

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        snapshot: Box<GaussianCloud>,
    },

    #[error("backward pass does not match the retained forward state: {0}")]
    ForwardStateMismatch(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake-case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroQuaternion => "zero_quaternion",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnsupportedDirections(_) => "unsupported_directions",
            Error::DanglingAnchor { .. } => "dangling_anchor",
            Error::MissingFrame { .. } => "missing_frame",
            Error::ResolutionMismatch { .. } => "resolution_mismatch",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::InsufficientPoints { .. } => "insufficient_points",
            Error::DisconnectedPlan(_) => "disconnected_plan",
            Error::InconsistentEdge(_) => "inconsistent_edge",
            Error::FlatRelativeDepth => "flat_relative_depth",
            Error::EmptyScene => "empty_scene",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::ForwardStateMismatch(_) => "forward_state_mismatch",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
