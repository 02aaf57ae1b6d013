//! Global registration: chain relative poses from the root, optionally refine
//! against loop-closing edges, and merge every frame's points into the input frame.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geom::{exp_so3, Intrinsics, Pose, Similarity, Vec3};
use crate::imaging::{DepthMap, Image, PointMap};
use crate::trajectory::FrameId;

use super::graph::MatchGraph;
use super::procrustes::{pair_weights, PairObservation, RelativePose, MIN_WEIGHT};

/// A frame's own pointmap (in its camera frame) and its colors.
#[derive(Debug, Clone)]
pub struct FrameView {
    pub frame_id: FrameId,
    pub pointmap: PointMap,
    pub image: Option<Image>,
}

#[derive(Debug, Clone, Copy)]
pub struct RegisterOptions {
    pub refine_iters: usize,
    /// Initial step of the preconditioned gradient descent; decays 10x over the run.
    pub step: f64,
    /// Correspondences sampled per edge for the refinement objective.
    pub samples_per_edge: usize,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        Self {
            refine_iters: 400,
            step: 0.3,
            samples_per_edge: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergedPoint {
    pub position: Vec3,
    pub color: [f32; 3],
    pub confidence: f64,
    pub frame_id: FrameId,
}

#[derive(Debug, Clone)]
pub struct RegisteredScene {
    /// Camera-to-root pose per frame, indexed by frame id.
    pub poses: Vec<Pose>,
    /// Per-frame factor from pointmap units to root units.
    pub scales: Vec<f64>,
    pub intrinsics: Intrinsics,
    pub points: Vec<MergedPoint>,
    /// Absolute depth in root units, indexed by frame id.
    pub depths: Vec<DepthMap>,
}

impl RegisteredScene {
    pub fn similarity(&self, frame: FrameId) -> Similarity {
        Similarity {
            scale: self.scales[frame],
            rotation: self.poses[frame].rotation,
            translation: self.poses[frame].translation,
        }
    }
}

pub struct RegistrationInput<'a> {
    pub graph: &'a MatchGraph,
    /// One per graph edge, same order.
    pub relative: &'a [RelativePose],
    /// One per graph edge when refinement runs; may be empty otherwise.
    pub observations: &'a [PairObservation],
    /// One per graph node, indexed by frame id.
    pub views: &'a [FrameView],
    pub intrinsics: Intrinsics,
}

fn check_consistency(input: &RegistrationInput) -> Result<()> {
    let g = input.graph;
    if input.relative.len() != g.edges.len() {
        return Err(Error::InconsistentEdge(format!(
            "{} relative poses for {} edges",
            input.relative.len(),
            g.edges.len()
        )));
    }
    let n = g.nodes.len();
    for (k, id) in g.nodes.iter().enumerate() {
        if *id != k {
            return Err(Error::InconsistentEdge(format!("node {k} has id {id}")));
        }
    }
    if input.views.len() != n {
        return Err(Error::InconsistentEdge(format!(
            "{} views for {n} frames",
            input.views.len()
        )));
    }
    for (k, v) in input.views.iter().enumerate() {
        if v.frame_id != k {
            return Err(Error::InconsistentEdge(format!("view {k} has frame id {}", v.frame_id)));
        }
    }
    for e in &g.edges {
        if e.ref_frame >= n || e.src_frame >= n || e.ref_frame == e.src_frame {
            return Err(Error::InconsistentEdge(format!(
                "edge {} -> {} outside {n} frames",
                e.src_frame, e.ref_frame
            )));
        }
    }
    if !input.observations.is_empty() {
        if input.observations.len() != g.edges.len() {
            return Err(Error::InconsistentEdge(format!(
                "{} observations for {} edges",
                input.observations.len(),
                g.edges.len()
            )));
        }
        for (o, e) in input.observations.iter().zip(&g.edges) {
            if o.ref_frame_id != e.ref_frame || o.src_frame_id != e.src_frame {
                return Err(Error::InconsistentEdge(format!(
                    "observation {}->{} does not match edge {}->{}",
                    o.src_frame_id, o.ref_frame_id, e.src_frame, e.ref_frame
                )));
            }
        }
    }
    Ok(())
}

/// Root-to-leaf composition along the tree edges.
pub fn chain_tree(graph: &MatchGraph, relative: &[RelativePose]) -> Result<Vec<Similarity>> {
    let n = graph.nodes.len();
    let mut children: Vec<Vec<(FrameId, usize)>> = vec![Vec::new(); n];
    for (k, e) in graph.tree_edges() {
        children[e.ref_frame].push((e.src_frame, k));
    }
    let mut abs: Vec<Option<Similarity>> = vec![None; n];
    abs[graph.root] = Some(Similarity::identity());
    let mut queue = VecDeque::from([graph.root]);
    while let Some(f) = queue.pop_front() {
        let base = abs[f].unwrap();
        for &(child, k) in &children[f] {
            if abs[child].is_some() {
                return Err(Error::InconsistentEdge(format!("frame {child} has two parents")));
            }
            abs[child] = Some(base.compose(&relative[k].similarity()));
            queue.push_back(child);
        }
    }
    abs.into_iter()
        .enumerate()
        .map(|(k, s)| s.ok_or(Error::DisconnectedPlan(k)))
        .collect()
}

struct EdgeSamples {
    ref_frame: FrameId,
    src_frame: FrameId,
    src: Vec<Vec3>,
    dst: Vec<Vec3>,
    weights: Vec<f64>,
}

fn sample_edges(obs: &[PairObservation], per_edge: usize) -> Vec<EdgeSamples> {
    obs.iter()
        .map(|o| {
            let w = pair_weights(o);
            let idx: Vec<usize> = (0..w.len()).filter(|&k| w[k] >= MIN_WEIGHT).collect();
            let stride = (idx.len() / per_edge.max(1)).max(1);
            let pick: Vec<usize> = idx.into_iter().step_by(stride).collect();
            let total: f64 = pick.iter().map(|&k| w[k]).sum();
            EdgeSamples {
                ref_frame: o.ref_frame_id,
                src_frame: o.src_frame_id,
                src: pick.iter().map(|&k| o.src_in_src.points[k]).collect(),
                dst: pick.iter().map(|&k| o.src_in_ref.points[k]).collect(),
                weights: pick.iter().map(|&k| w[k] / total.max(f64::MIN_POSITIVE)).collect(),
            }
        })
        .collect()
}

/// Preconditioned gradient descent on `Σ_edges Σ w ‖S_src x − S_ref y‖²`
/// over every non-root frame's rotation, translation and log-scale.
fn refine(abs: &mut [Similarity], root: FrameId, edges: &[EdgeSamples], opts: &RegisterOptions) {
    let n = abs.len();
    for it in 0..opts.refine_iters {
        let step = opts.step * 0.1f64.powf(it as f64 / opts.refine_iters.max(1) as f64);
        let mut g_rot = vec![Vec3::zeros(); n];
        let mut g_trans = vec![Vec3::zeros(); n];
        let mut g_log = vec![0.0; n];
        let mut h_rot = vec![0.0; n];
        let mut h_trans = vec![0.0; n];
        let mut h_log = vec![0.0; n];
        let mut centroid = vec![Vec3::zeros(); n];
        let mut cw = vec![0.0; n];

        // rotations are perturbed about each frame's point centroid to decouple them from translation
        for e in edges {
            for (k, &w) in e.weights.iter().enumerate() {
                centroid[e.src_frame] += w * abs[e.src_frame].apply(&e.src[k]);
                centroid[e.ref_frame] += w * abs[e.ref_frame].apply(&e.dst[k]);
                cw[e.src_frame] += w;
                cw[e.ref_frame] += w;
            }
        }
        for f in 0..n {
            if cw[f] > 0.0 {
                centroid[f] /= cw[f];
            }
        }

        for e in edges {
            let (sa, sb) = (abs[e.src_frame], abs[e.ref_frame]);
            for (k, &w) in e.weights.iter().enumerate() {
                let p = sa.apply(&e.src[k]);
                let q = sb.apply(&e.dst[k]);
                let r = p - q;
                // d/dθ of w‖p − q‖² with p moving, then q moving (sign flips)
                for (f, point, sign) in [(e.src_frame, p, 1.0), (e.ref_frame, q, -1.0)] {
                    let lever = point - centroid[f];
                    let scaled = point - abs[f].translation;
                    g_trans[f] += sign * 2.0 * w * r;
                    g_rot[f] += sign * 2.0 * w * lever.cross(&r);
                    g_log[f] += sign * 2.0 * w * scaled.dot(&r);
                    h_trans[f] += 2.0 * w;
                    h_rot[f] += 2.0 * w * lever.norm_squared();
                    h_log[f] += 2.0 * w * scaled.norm_squared();
                }
            }
        }

        for f in 0..n {
            if f == root || h_trans[f] == 0.0 {
                continue;
            }
            let dt = -step * g_trans[f] / h_trans[f];
            let dw = if h_rot[f] > 0.0 { -step * g_rot[f] / h_rot[f] } else { Vec3::zeros() };
            let dl = if h_log[f] > 0.0 { -step * g_log[f] / h_log[f] } else { 0.0 };
            let s = &mut abs[f];
            let r = exp_so3(&dw);
            let c = centroid[f];
            // S' x = exp(ω)(S x − c) + c + dt, then rescale about the camera center
            let new_t = r * (s.translation - c) + c + dt;
            s.rotation = r * s.rotation;
            s.translation = new_t;
            s.scale *= dl.exp();
        }
    }
}

pub fn register(input: &RegistrationInput, opts: &RegisterOptions) -> Result<RegisteredScene> {
    check_consistency(input)?;
    let mut abs = chain_tree(input.graph, input.relative)?;

    if input.graph.has_extra_edges() && opts.refine_iters > 0 {
        if input.observations.is_empty() {
            return Err(Error::InconsistentEdge(
                "refinement needs the pair observations".into(),
            ));
        }
        let samples = sample_edges(input.observations, opts.samples_per_edge);
        refine(&mut abs, input.graph.root, &samples, opts);
    }

    let mut points = Vec::new();
    let mut depths = Vec::with_capacity(abs.len());
    for (view, sim) in input.views.iter().zip(&abs) {
        let pm = &view.pointmap;
        for (k, (p, c)) in pm.points.iter().zip(&pm.confidence).enumerate() {
            if *c <= 0.0 {
                continue;
            }
            let color = match &view.image {
                Some(img) if img.width == pm.width && img.height == pm.height => {
                    img.pixel(k % pm.width, k / pm.width)
                }
                _ => [0.5; 3],
            };
            points.push(MergedPoint {
                position: sim.apply(p),
                color,
                confidence: *c,
                frame_id: view.frame_id,
            });
        }
        depths.push(pm.depth(sim.scale));
    }

    Ok(RegisteredScene {
        poses: abs.iter().map(Similarity::pose).collect(),
        scales: abs.iter().map(|s| s.scale).collect(),
        intrinsics: input.intrinsics,
        points,
        depths,
    })
}
