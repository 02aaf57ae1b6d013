//! Synthetic oracle: analytic scenes with exact geometry for every stage,
//! rendered by ray casting, plus controllable per-frame distortions.

mod dataset;
mod distort;
mod scene;

pub use dataset::{
    emit_dataset, eval_poses, pair_observation, relative_depth, render_plan, EmitOptions, EvalView, Manifest,
    ManifestFrame, MANIFEST_VERSION,
};
pub use distort::{DistortionMode, DistortionSpec};
pub use scene::{render_gt, GtView, Primitive, SynthScene, Texture, SUPERSAMPLE};
