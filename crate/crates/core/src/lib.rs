//! Single-image-to-3D reconstruction core.
//!
//! The pipeline plans articulated camera trajectories, registers generated
//! frames from their pointmaps, calibrates monocular depth against the
//! registered geometry, and fits canonical 3D Gaussians together with a
//! per-frame distortion field that is discarded after training.

pub mod depthcal;
pub mod error;
pub mod field;
pub mod gaussian;
pub mod geom;
pub mod imaging;
pub mod io;
pub mod matching;
pub mod rng;
pub mod splat;
pub mod synth;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
pub use gaussian::{CloudGrad, GaussianCloud};
pub use geom::{FrameStamp, Intrinsics, Pose, Similarity};
pub use imaging::{DepthKind, DepthMap, Image, PointMap};
