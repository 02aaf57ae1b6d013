//! Writing a complete synthetic dataset.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{FrameStamp, Intrinsics, Pose, Vec3};
use crate::imaging::{DepthKind, DepthMap, PointMap};
use crate::io::{depth_to_pfm, write_json, write_pfm, write_png, DatasetLayout, PoseFile};
use crate::matching::{build_match_graph, PairObservation};
use crate::rng::stream;
use crate::trajectory::{FrameId, TrajectoryPlan};

use super::distort::DistortionSpec;
use super::scene::{render_gt, GtView, SynthScene};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitOptions {
    pub seed: u64,
    /// Undistorted views off the trajectory, written to `eval/`.
    pub eval_views: usize,
    /// Cross-clip edges whose pair pointmaps are written besides the tree edges.
    pub extra_edges: usize,
}

impl Default for EmitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            eval_views: 4,
            extra_edges: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub frame_id: FrameId,
    pub clip_id: usize,
    pub index_in_clip: usize,
    pub stamp: FrameStamp,
    pub gain: f64,
    /// The relative depth is `depth_scale · depth + depth_shift`.
    pub depth_scale: f64,
    pub depth_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalView {
    pub name: String,
    /// Camera-to-world, row-major.
    pub pose: [f64; 16],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub intrinsics: Intrinsics,
    pub distortion: DistortionSpec,
    pub scene: SynthScene,
    pub frames: Vec<ManifestFrame>,
    pub eval_views: Vec<EvalView>,
}

impl Manifest {
    pub fn eval_path(name: &str) -> String {
        format!("eval/{name}.png")
    }
}

/// `a·d + b` on valid pixels.
pub fn relative_depth(abs: &DepthMap, a: f64, b: f64) -> DepthMap {
    let data = abs
        .data
        .iter()
        .zip(&abs.valid)
        .map(|(d, ok)| if *ok { a * d + b } else { 0.0 })
        .collect();
    DepthMap {
        width: abs.width,
        height: abs.height,
        data,
        valid: abs.valid.clone(),
        kind: DepthKind::Relative,
    }
}

/// The source frame's points expressed in the reference camera frame.
pub fn pair_observation(ref_id: FrameId, ref_pose: &Pose, src_id: FrameId, src_pose: &Pose, src: &PointMap) -> PairObservation {
    let to_ref = ref_pose.inverse().compose(src_pose);
    let points = src
        .points
        .iter()
        .zip(&src.confidence)
        .map(|(p, c)| if *c > 0.0 { to_ref.transform_point(p) } else { Vec3::zeros() })
        .collect();
    PairObservation {
        ref_frame_id: ref_id,
        src_frame_id: src_id,
        src_in_src: src.clone(),
        src_in_ref: PointMap {
            width: src.width,
            height: src.height,
            points,
            confidence: src.confidence.clone(),
        },
    }
}

/// Poses for held-out views: between the trajectory's first-stage frames,
/// off the planned paths, looking at the scene.
pub fn eval_poses(plan: &TrajectoryPlan, count: usize) -> Vec<Pose> {
    let reach = plan.step.translation * (plan.clip_length.saturating_sub(1)) as f64;
    (0..count)
        .map(|k| {
            let a = std::f64::consts::TAU * (k as f64 + 0.5) / count as f64;
            let r = 0.5 * reach;
            let t = Vec3::new(r * a.cos(), r * a.sin(), 0.0);
            let turn = plan.step.rotation * (plan.clip_length.saturating_sub(1)) as f64 * 0.5;
            let rot = crate::geom::rot_y(-turn * a.cos()) * crate::geom::rot_x(turn * a.sin());
            Pose::new(rot, t)
        })
        .collect()
}

/// Ground truth for every planned frame, in plan order.
pub fn render_plan(scene: &SynthScene, plan: &TrajectoryPlan, k: &Intrinsics) -> Result<Vec<(Pose, GtView)>> {
    let seq = plan.pose_sequence()?;
    Ok(seq.par_iter().map(|(_, pose, _)| (*pose, render_gt(scene, pose, k))).collect())
}

/// Writes frames (warped per `distortion`), exact pointmaps, absolute and
/// affinely scrambled relative depths, pair pointmaps for the match graph,
/// ground-truth poses, held-out views and the manifest.
pub fn emit_dataset(
    scene: &SynthScene,
    plan: &TrajectoryPlan,
    k: &Intrinsics,
    distortion: &DistortionSpec,
    opts: &EmitOptions,
    out_dir: &Path,
) -> Result<Manifest> {
    scene.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let layout = DatasetLayout::new(out_dir);
    let gt = render_plan(scene, plan, k)?;
    let mut rng = stream(opts.seed, 10);
    let affine: Vec<(f64, f64)> = plan
        .frames
        .iter()
        .map(|_| (rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0)))
        .collect();

    let frames: Vec<ManifestFrame> = plan
        .frames
        .iter()
        .map(|f| ManifestFrame {
            frame_id: f.frame_id,
            clip_id: f.clip_id,
            index_in_clip: f.index_in_clip,
            stamp: f.stamp,
            gain: distortion.gain(f.stamp),
            depth_scale: affine[f.frame_id].0,
            depth_shift: affine[f.frame_id].1,
        })
        .collect();

    plan.frames.par_iter().try_for_each(|f| -> Result<()> {
        let (_, view) = &gt[f.frame_id];
        let frame = distortion.apply(&view.image, f.stamp);
        write_png(&layout.frame(f.clip_id, f.index_in_clip), &frame)?;
        layout.write_pointmap(f.frame_id, &view.pointmap)?;
        write_pfm(&layout.depth_abs(f.frame_id), &depth_to_pfm(&view.depth))?;
        let (a, b) = affine[f.frame_id];
        write_pfm(&layout.depth_rel(f.frame_id), &depth_to_pfm(&relative_depth(&view.depth, a, b)))?;
        Ok(())
    })?;

    let graph = build_match_graph(plan, opts.extra_edges)?;
    graph.edges.par_iter().try_for_each(|e| {
        let obs = pair_observation(e.ref_frame, &gt[e.ref_frame].0, e.src_frame, &gt[e.src_frame].0, &gt[e.src_frame].1.pointmap);
        layout.write_pair(&obs)
    })?;

    let eval: Vec<EvalView> = eval_poses(plan, opts.eval_views)
        .into_iter()
        .enumerate()
        .map(|(i, pose)| -> Result<EvalView> {
            let name = format!("view{i}");
            write_png(&out_dir.join(Manifest::eval_path(&name)), &render_gt(scene, &pose, k).image)?;
            Ok(EvalView {
                name,
                pose: pose.to_row_major(),
            })
        })
        .collect::<Result<_>>()?;

    write_json(&layout.plan(), plan)?;
    write_json(&layout.poses_gt(), &PoseFile::new(k, gt.iter().enumerate().map(|(i, (p, _))| (i, *p))))?;
    let manifest = Manifest {
        schema_version: MANIFEST_VERSION,
        seed: opts.seed,
        intrinsics: *k,
        distortion: *distortion,
        scene: scene.clone(),
        frames,
        eval_views: eval,
    };
    write_json(&layout.manifest(), &manifest)?;
    Ok(manifest)
}
