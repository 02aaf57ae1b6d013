//! JSON documents: camera poses and relative poses.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Mat3, Pose, Vec3};
use crate::matching::RelativePose;
use crate::trajectory::FrameId;

/// Camera-to-world 4×4 row-major matrices keyed by frame id, plus the shared intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    pub poses: BTreeMap<FrameId, [f64; 16]>,
    /// Per-frame scale from pointmap units to world units, when known.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scales: BTreeMap<FrameId, f64>,
}

impl PoseFile {
    pub fn new(intrinsics: &Intrinsics, poses: impl IntoIterator<Item = (FrameId, Pose)>) -> Self {
        Self {
            focal: intrinsics.focal,
            width: intrinsics.width,
            height: intrinsics.height,
            poses: poses.into_iter().map(|(k, p)| (k, p.to_row_major())).collect(),
            scales: BTreeMap::new(),
        }
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(self.focal, self.width, self.height)
    }

    pub fn pose(&self, id: FrameId) -> Option<Pose> {
        self.poses.get(&id).map(Pose::from_row_major)
    }

    /// Poses indexed by frame id; every id in `0..n` must be present.
    pub fn dense(&self) -> Result<Vec<Pose>> {
        (0..self.poses.len())
            .map(|k| self.pose(k).ok_or_else(|| Error::format("poses", format!("frame {k} missing"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativePoseRecord {
    pub ref_frame_id: FrameId,
    pub src_frame_id: FrameId,
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub scale: f64,
    pub residual: f64,
}

impl RelativePoseRecord {
    pub fn new(ref_frame_id: FrameId, src_frame_id: FrameId, r: &RelativePose) -> Self {
        let m = r.rotation;
        Self {
            ref_frame_id,
            src_frame_id,
            rotation: std::array::from_fn(|k| m[(k / 3, k % 3)]),
            translation: [r.translation.x, r.translation.y, r.translation.z],
            scale: r.scale,
            residual: r.residual,
        }
    }

    pub fn relative(&self) -> RelativePose {
        RelativePose {
            rotation: Mat3::from_row_slice(&self.rotation),
            translation: Vec3::from(self.translation),
            scale: self.scale,
            residual: self.residual,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    super::create_parent(path)?;
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}
