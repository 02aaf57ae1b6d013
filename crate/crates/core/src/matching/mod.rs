//! Intrinsics, pairwise poses and global registration from pointmaps.

mod focal;
mod graph;
mod procrustes;
mod register;

use rayon::prelude::*;

pub use focal::{estimate_focal, focal_objective, MIN_VALID_PIXELS};
pub use graph::{build_match_graph, Edge, EdgeKind, MatchGraph};
pub use procrustes::{
    pair_weights, relative_pose, weighted_similarity, PairObservation, RelativePose, MIN_WEIGHT,
};
pub use register::{
    chain_tree, register, FrameView, MergedPoint, RegisterOptions, RegisteredScene,
    RegistrationInput,
};

use crate::error::Result;

/// Relative pose of every edge; edges are independent.
pub fn match_pairs(observations: &[PairObservation]) -> Result<Vec<RelativePose>> {
    observations.par_iter().map(relative_pose).collect()
}
