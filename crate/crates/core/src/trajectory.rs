//! Articulated camera trajectories.
//!
//! Stage one sends `D` clips out of the input image. Each stage-one clip has
//! `l` frames and its first frame is the input itself. Stage two continues
//! from the terminal frames of `D - 1` stage-one clips, turning a quarter
//! (never back toward the input), and generates `l` fresh frames per clip.
//! A plan therefore holds `1 + D(l-1) + l(D-1) = l·D + (l-1)(D-1)` frames.
//!
//! Stamps count signed steps along the horizontal (`ti`) and vertical (`tj`)
//! axes, scaled by one over the longest step count in the plan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rot_x, rot_y, FrameStamp, Pose, Vec3};
use crate::imaging::Image;

pub type FrameId = usize;

/// Frame id of the input image in every plan.
pub const INPUT_FRAME: FrameId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Right,
    Up,
    Left,
    Down,
}

impl Direction {
    /// Rotation order used to pick the stage-two turn.
    const CYCLE: [Direction; 4] = [Direction::Right, Direction::Up, Direction::Left, Direction::Down];

    fn unit(self) -> Vec3 {
        match self {
            Direction::Right => Vec3::new(1.0, 0.0, 0.0),
            Direction::Left => Vec3::new(-1.0, 0.0, 0.0),
            // y points down
            Direction::Up => Vec3::new(0.0, -1.0, 0.0),
            Direction::Down => Vec3::new(0.0, 1.0, 0.0),
        }
    }

    /// Signed increment applied to the stamp per step.
    fn stamp_delta(self) -> (f64, f64) {
        match self {
            Direction::Right => (1.0, 0.0),
            Direction::Left => (-1.0, 0.0),
            Direction::Up => (0.0, 1.0),
            Direction::Down => (0.0, -1.0),
        }
    }

    /// One step: translate along the direction and turn back toward the scene by `angle`.
    fn step_pose(self, step: &Step) -> Pose {
        let a = step.rotation;
        let rotation = match self {
            Direction::Right => rot_y(-a),
            Direction::Left => rot_y(a),
            Direction::Up => rot_x(-a),
            Direction::Down => rot_x(a),
        };
        Pose::new(rotation, self.unit() * step.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    First,
    Second,
}

/// Per-frame camera motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// World units per frame.
    pub translation: f64,
    /// Radians per frame, turning the camera back toward the input's optical axis.
    #[serde(default)]
    pub rotation: f64,
}

impl Step {
    pub fn translation(t: f64) -> Self {
        Self {
            translation: t,
            rotation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub id: usize,
    pub stage: Stage,
    pub direction: Direction,
    pub anchor_frame_id: FrameId,
    /// Poses relative to the anchor.
    pub poses: Vec<Pose>,
    pub stamps: Vec<FrameStamp>,
    pub frame_ids: Vec<FrameId>,
}

/// One unique frame of a plan, listed at the clip position where it is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedFrame {
    pub frame_id: FrameId,
    pub clip_id: usize,
    pub index_in_clip: usize,
    pub stamp: FrameStamp,
    /// Frame generated just before this one; `None` for the input.
    pub predecessor: Option<FrameId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub clip_length: usize,
    pub directions: usize,
    pub step: Step,
    pub normalizer: f64,
    pub clips: Vec<Clip>,
    pub frames: Vec<PlannedFrame>,
}

/// `l·D + (l-1)(D-1)`.
pub fn frame_count(l: usize, d: usize) -> usize {
    l * d + (l - 1) * (d - 1)
}

pub fn plan_articulated(l: usize, directions: usize, step: Step) -> Result<TrajectoryPlan> {
    if directions != 2 && directions != 4 {
        return Err(Error::UnsupportedDirections(directions));
    }
    if l < 2 {
        return Err(Error::InvalidArgument(format!(
            "clip length must be at least 2, got {l}"
        )));
    }
    if !step.translation.is_finite() || !step.rotation.is_finite() {
        return Err(Error::InvalidArgument("step must be finite".into()));
    }
    let dirs: Vec<Direction> = if directions == 4 {
        Direction::CYCLE.to_vec()
    } else {
        vec![Direction::Right, Direction::Up]
    };
    // stage two reaches l steps out on its own axis
    let normalizer = 1.0 / l as f64;

    let mut clips = Vec::new();
    let mut frames = vec![PlannedFrame {
        frame_id: INPUT_FRAME,
        clip_id: 0,
        index_in_clip: 0,
        stamp: FrameStamp::ORIGIN,
        predecessor: None,
    }];
    let mut terminals = Vec::new();

    for (c, &dir) in dirs.iter().enumerate() {
        let step_pose = dir.step_pose(&step);
        let (di, dj) = dir.stamp_delta();
        let mut poses = Vec::with_capacity(l);
        let mut stamps = Vec::with_capacity(l);
        let mut ids = Vec::with_capacity(l);
        let mut pose = Pose::identity();
        for k in 0..l {
            let stamp = FrameStamp::new(di * k as f64 * normalizer, dj * k as f64 * normalizer);
            let id = if k == 0 {
                INPUT_FRAME
            } else {
                let id = frames.len();
                frames.push(PlannedFrame {
                    frame_id: id,
                    clip_id: c,
                    index_in_clip: k,
                    stamp,
                    predecessor: Some(*ids.last().expect("anchor precedes")),
                });
                id
            };
            poses.push(pose);
            stamps.push(stamp);
            ids.push(id);
            pose = pose.compose(&step_pose);
        }
        terminals.push((*ids.last().unwrap(), *stamps.last().unwrap()));
        clips.push(Clip {
            id: c,
            stage: Stage::First,
            direction: dir,
            anchor_frame_id: INPUT_FRAME,
            poses,
            stamps,
            frame_ids: ids,
        });
    }

    for k in 0..dirs.len() - 1 {
        let (anchor, anchor_stamp) = terminals[k];
        let dir = Direction::CYCLE[(Direction::CYCLE.iter().position(|d| *d == dirs[k]).unwrap() + 1) % 4];
        let step_pose = dir.step_pose(&step);
        let (di, dj) = dir.stamp_delta();
        let c = clips.len();
        let mut poses = Vec::with_capacity(l);
        let mut stamps = Vec::with_capacity(l);
        let mut ids = Vec::with_capacity(l);
        let mut pose = Pose::identity();
        let mut prev = anchor;
        for idx in 0..l {
            pose = pose.compose(&step_pose);
            let n = (idx + 1) as f64 * normalizer;
            let stamp = FrameStamp::new(
                if di != 0.0 { di * n } else { anchor_stamp.ti },
                if dj != 0.0 { dj * n } else { anchor_stamp.tj },
            );
            let id = frames.len();
            frames.push(PlannedFrame {
                frame_id: id,
                clip_id: c,
                index_in_clip: idx,
                stamp,
                predecessor: Some(prev),
            });
            prev = id;
            poses.push(pose);
            stamps.push(stamp);
            ids.push(id);
        }
        clips.push(Clip {
            id: c,
            stage: Stage::Second,
            direction: dir,
            anchor_frame_id: anchor,
            poses,
            stamps,
            frame_ids: ids,
        });
    }

    debug_assert_eq!(frames.len(), frame_count(l, directions));
    Ok(TrajectoryPlan {
        clip_length: l,
        directions,
        step,
        normalizer,
        clips,
        frames,
    })
}

impl TrajectoryPlan {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, id: FrameId) -> Option<&PlannedFrame> {
        self.frames.get(id).filter(|f| f.frame_id == id)
    }

    /// Absolute intended pose of every frame, composed through the clip anchors.
    pub fn pose_sequence(&self) -> Result<Vec<(FrameId, Pose, FrameStamp)>> {
        let mut abs: Vec<Option<Pose>> = vec![None; self.frames.len()];
        abs[INPUT_FRAME] = Some(Pose::identity());
        for clip in &self.clips {
            let anchor = abs
                .get(clip.anchor_frame_id)
                .copied()
                .flatten()
                .ok_or(Error::DanglingAnchor {
                    clip: clip.id,
                    anchor: clip.anchor_frame_id,
                })?;
            for (&id, rel) in clip.frame_ids.iter().zip(&clip.poses) {
                let slot = abs.get_mut(id).ok_or(Error::DanglingAnchor {
                    clip: clip.id,
                    anchor: id,
                })?;
                if slot.is_none() {
                    *slot = Some(anchor.compose(rel));
                }
            }
        }
        self.frames
            .iter()
            .map(|f| {
                abs[f.frame_id]
                    .map(|p| (f.frame_id, p, f.stamp))
                    .ok_or(Error::DanglingAnchor {
                        clip: f.clip_id,
                        anchor: f.frame_id,
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: FrameId,
    pub image: Image,
    pub stamp: FrameStamp,
    pub clip_id: usize,
    pub index_in_clip: usize,
}

/// Source of generated frames: a directory of pre-generated clips or the synthetic oracle.
pub trait FrameProvider: Sync {
    fn fetch(&self, frame: &PlannedFrame) -> Result<Image>;
}

pub fn acquire_frames(plan: &TrajectoryPlan, provider: &dyn FrameProvider) -> Result<Vec<FrameRecord>> {
    let records: Vec<FrameRecord> = plan
        .frames
        .par_iter()
        .map(|f| {
            Ok(FrameRecord {
                frame_id: f.frame_id,
                image: provider.fetch(f)?,
                stamp: f.stamp,
                clip_id: f.clip_id,
                index_in_clip: f.index_in_clip,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(first) = records.first() {
        let expected = first.image.size();
        for r in &records {
            if r.image.size() != expected {
                return Err(Error::ResolutionMismatch {
                    frame_id: r.frame_id,
                    expected,
                    found: r.image.size(),
                });
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn frame_counts_match_formula() {
        assert_eq!(plan_articulated(16, 4, Step::translation(0.1)).unwrap().len(), 109);
        assert_eq!(plan_articulated(2, 2, Step::translation(0.1)).unwrap().len(), 5);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            plan_articulated(4, 3, Step::translation(0.1)),
            Err(Error::UnsupportedDirections(3))
        ));
        assert!(plan_articulated(1, 4, Step::translation(0.1)).is_err());
    }

    #[test]
    fn stamps_follow_cumulative_steps() {
        let plan = plan_articulated(3, 4, Step::translation(0.1)).unwrap();
        let norm = plan.normalizer;
        // enumerate by hand: normalizer is 1/l, the right clip is clip 0
        assert_eq!(norm, 1.0 / 3.0);
        let right = &plan.clips[0];
        assert_eq!(right.direction, Direction::Right);
        assert_eq!(right.stamps[2], FrameStamp::new(norm * 2.0, 0.0));
        let max_right = right.stamps[2].ti;
        let up_from_right = plan
            .clips
            .iter()
            .find(|c| c.stage == Stage::Second && c.anchor_frame_id == right.frame_ids[2])
            .unwrap();
        assert_eq!(up_from_right.direction, Direction::Up);
        for (k, s) in up_from_right.stamps.iter().enumerate() {
            assert_eq!(*s, FrameStamp::new(max_right, (k + 1) as f64 * norm));
        }
    }

    #[test]
    fn left_clip_translates_by_whole_steps() {
        let plan = plan_articulated(5, 4, Step::translation(0.25)).unwrap();
        let poses = plan.pose_sequence().unwrap();
        assert_eq!(poses[0].1, Pose::identity());
        assert_eq!(poses[0].2, FrameStamp::ORIGIN);
        let left = plan.clips.iter().find(|c| c.direction == Direction::Left && c.stage == Stage::First).unwrap();
        for (k, id) in left.frame_ids.iter().enumerate() {
            let p = poses[*id].1;
            assert_eq!(p.rotation, crate::geom::Mat3::identity());
            assert!((p.translation - Vec3::new(-(k as f64) * 0.25, 0.0, 0.0)).amax() < 1e-15);
        }
    }

    #[test]
    fn second_stage_pose_matches_matrix_chain() {
        let step = Step {
            translation: 0.2,
            rotation: 0.03,
        };
        let plan = plan_articulated(4, 4, step).unwrap();
        let poses = plan.pose_sequence().unwrap();
        let right = &plan.clips[0];
        let up = plan.clips.iter().find(|c| c.anchor_frame_id == right.frame_ids[3]).unwrap();
        // terminal of "right" is 3 steps out; then two steps "up"
        let r = Direction::Right.step_pose(&step).to_matrix();
        let u = Direction::Up.step_pose(&step).to_matrix();
        let oracle = r * r * r * u * u;
        let got = poses[up.frame_ids[1]].1.to_matrix();
        assert!((got - oracle).amax() < 1e-14);
    }

    #[test]
    fn dangling_anchor_is_reported() {
        let mut plan = plan_articulated(3, 2, Step::translation(0.1)).unwrap();
        let last = plan.clips.len() - 1;
        plan.clips[last].anchor_frame_id = 999;
        assert!(matches!(
            plan.pose_sequence(),
            Err(Error::DanglingAnchor { anchor: 999, .. })
        ));
    }

    fn check_plan_properties(l: usize, d: usize) {
        let plan = plan_articulated(l, d, Step::translation(0.1)).unwrap();
        assert_eq!(plan.len(), frame_count(l, d));
        let origins: Vec<_> = plan.frames.iter().filter(|f| f.stamp.is_origin()).collect();
        assert_eq!(origins.len(), 1);
        assert_eq!(origins[0].frame_id, INPUT_FRAME);
        let stamps: HashSet<(u64, u64)> = plan
            .frames
            .iter()
            .map(|f| (f.stamp.ti.to_bits(), f.stamp.tj.to_bits()))
            .collect();
        assert_eq!(stamps.len(), plan.len());
        let slots: HashSet<(usize, usize)> =
            plan.frames.iter().map(|f| (f.clip_id, f.index_in_clip)).collect();
        assert_eq!(slots.len(), plan.len());
        for f in &plan.frames {
            assert!(f.stamp.ti.abs() <= 1.0 && f.stamp.tj.abs() <= 1.0);
        }
        for clip in &plan.clips {
            assert_eq!(clip.poses.len(), l);
            assert_eq!(clip.stamps.len(), l);
            let moving = |s: &FrameStamp| match clip.direction {
                Direction::Left | Direction::Right => s.ti.abs(),
                _ => s.tj.abs(),
            };
            for w in clip.stamps.windows(2) {
                assert!(moving(&w[1]) > moving(&w[0]));
            }
        }
    }

    #[test]
    fn plan_properties_hold_for_all_sizes() {
        for l in 2..=16 {
            for d in [2, 4] {
                check_plan_properties(l, d);
            }
        }
    }

    struct Blank(usize);
    impl FrameProvider for Blank {
        fn fetch(&self, f: &PlannedFrame) -> Result<Image> {
            let w = if f.frame_id == 3 { self.0 + 1 } else { self.0 };
            Ok(Image::filled(w, 4, 3, 0.0))
        }
    }

    #[test]
    fn acquire_checks_resolution() {
        let plan = plan_articulated(2, 2, Step::translation(0.1)).unwrap();
        let err = acquire_frames(&plan, &Blank(4)).unwrap_err();
        assert!(matches!(err, Error::ResolutionMismatch { frame_id: 3, .. }));
    }
}
