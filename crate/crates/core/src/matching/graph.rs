//! Temporal match graph: each frame is paired with the frame generated just before it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{FrameId, TrajectoryPlan, INPUT_FRAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Tree,
    Extra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub ref_frame: FrameId,
    pub src_frame: FrameId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchGraph {
    pub root: FrameId,
    pub nodes: Vec<FrameId>,
    pub edges: Vec<Edge>,
}

impl MatchGraph {
    pub fn tree_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.kind == EdgeKind::Tree)
    }

    pub fn has_extra_edges(&self) -> bool {
        self.edges.iter().any(|e| e.kind == EdgeKind::Extra)
    }
}

/// Tree of `L - 1` predecessor edges rooted at the input, plus `extra` cross-clip
/// edges between the frames with the closest stamps.
pub fn build_match_graph(plan: &TrajectoryPlan, extra: usize) -> Result<MatchGraph> {
    let n = plan.frames.len();
    let mut edges = Vec::with_capacity(n + extra);
    for f in &plan.frames {
        if let Some(p) = f.predecessor {
            if p >= n {
                return Err(Error::DisconnectedPlan(f.frame_id));
            }
            edges.push(Edge {
                ref_frame: p,
                src_frame: f.frame_id,
                kind: EdgeKind::Tree,
            });
        }
    }

    // every frame must reach the input by following predecessors
    for f in &plan.frames {
        let mut cur = f.frame_id;
        let mut hops = 0;
        while cur != INPUT_FRAME {
            cur = plan
                .frames
                .get(cur)
                .and_then(|g| g.predecessor)
                .ok_or(Error::DisconnectedPlan(f.frame_id))?;
            hops += 1;
            if hops > n {
                return Err(Error::DisconnectedPlan(f.frame_id));
            }
        }
    }

    if extra > 0 {
        let mut candidates = Vec::new();
        for a in &plan.frames {
            for b in &plan.frames {
                if a.frame_id >= b.frame_id || a.clip_id == b.clip_id {
                    continue;
                }
                if a.predecessor == Some(b.frame_id) || b.predecessor == Some(a.frame_id) {
                    continue;
                }
                let d = (a.stamp.ti - b.stamp.ti).hypot(a.stamp.tj - b.stamp.tj);
                candidates.push((d, a.frame_id, b.frame_id));
            }
        }
        candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        for (_, a, b) in candidates.into_iter().take(extra) {
            edges.push(Edge {
                ref_frame: a,
                src_frame: b,
                kind: EdgeKind::Extra,
            });
        }
    }

    Ok(MatchGraph {
        root: INPUT_FRAME,
        nodes: plan.frames.iter().map(|f| f.frame_id).collect(),
        edges,
    })
}
