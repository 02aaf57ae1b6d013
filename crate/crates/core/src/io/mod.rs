//! File formats and the on-disk dataset layout.
//!
//! ```text
//! plan.json
//! frames/<clip>/<index>.png
//! pointmaps/<frame>.pfm      3-channel, camera frame
//! conf/<frame>.pfm
//! depth_rel/<frame>.pfm
//! depth_abs/<frame>.pfm      synthetic datasets only
//! pairs/<ref>-<src>.pfm      source points in the reference camera frame
//! poses_gt.json              synthetic datasets only
//! manifest.json
//! ```

mod checkpoint;
mod pfm;
mod ply;
mod poses;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{DepthKind, DepthMap, Image, PointMap};
use crate::matching::PairObservation;
use crate::trajectory::{FrameId, FrameProvider, PlannedFrame, TrajectoryPlan};

pub use checkpoint::{read_field, read_field_from, write_field, write_field_to};
pub use pfm::{
    depth_from_pfm, depth_to_pfm, pointmap_from_pfm, pointmap_to_pfm, read_pfm, read_pfm_from, write_pfm, write_pfm_to,
    Pfm,
};
pub use ply::{
    read_gaussians, read_gaussians_from, read_points, read_points_from, write_gaussians, write_gaussians_to,
    write_points, write_points_to,
};
pub use poses::{read_json, write_json, PoseFile, RelativePoseRecord};

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Writes an 8-bit RGB or gray PNG.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    create_parent(path)?;
    let bytes: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    match img.channels {
        3 => image::RgbImage::from_raw(w, h, bytes).map(|i| i.save(path)),
        _ => image::GrayImage::from_raw(w, h, bytes).map(|i| i.save(path)),
    }
    .ok_or_else(|| Error::format("png", "buffer size mismatch"))??;
    Ok(())
}

/// Reads any PNG as RGB in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Image::new(w as usize, h as usize, 3, rgb.into_raw())
}

/// Paths of a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn poses_gt(&self) -> PathBuf {
        self.root.join("poses_gt.json")
    }

    pub fn frame(&self, clip: usize, index: usize) -> PathBuf {
        self.root.join("frames").join(clip.to_string()).join(format!("{index}.png"))
    }

    pub fn pointmap(&self, id: FrameId) -> PathBuf {
        self.root.join("pointmaps").join(format!("{id}.pfm"))
    }

    pub fn confidence(&self, id: FrameId) -> PathBuf {
        self.root.join("conf").join(format!("{id}.pfm"))
    }

    pub fn depth_rel(&self, id: FrameId) -> PathBuf {
        self.root.join("depth_rel").join(format!("{id}.pfm"))
    }

    pub fn depth_abs(&self, id: FrameId) -> PathBuf {
        self.root.join("depth_abs").join(format!("{id}.pfm"))
    }

    pub fn pair(&self, ref_id: FrameId, src_id: FrameId) -> PathBuf {
        self.root.join("pairs").join(format!("{ref_id}-{src_id}.pfm"))
    }

    pub fn read_plan(&self) -> Result<TrajectoryPlan> {
        read_json(&self.plan())
    }

    pub fn read_frame(&self, f: &PlannedFrame) -> Result<Image> {
        let path = self.frame(f.clip_id, f.index_in_clip);
        if !path.exists() {
            return Err(Error::MissingFrame {
                frame_id: f.frame_id,
                path,
            });
        }
        read_png(&path)
    }

    pub fn read_pointmap(&self, id: FrameId) -> Result<PointMap> {
        pointmap_from_pfm(&read_pfm(&self.pointmap(id))?, &read_pfm(&self.confidence(id))?)
    }

    pub fn read_depth_rel(&self, id: FrameId) -> Result<DepthMap> {
        depth_from_pfm(&read_pfm(&self.depth_rel(id))?, DepthKind::Relative)
    }

    pub fn read_depth_abs(&self, id: FrameId) -> Result<DepthMap> {
        depth_from_pfm(&read_pfm(&self.depth_abs(id))?, DepthKind::Absolute)
    }

    /// The source frame's own pointmap and its points in the reference frame,
    /// sharing the source confidences.
    pub fn read_pair(&self, ref_id: FrameId, src_id: FrameId) -> Result<PairObservation> {
        let src_in_src = self.read_pointmap(src_id)?;
        let conf = read_pfm(&self.confidence(src_id))?;
        let src_in_ref = pointmap_from_pfm(&read_pfm(&self.pair(ref_id, src_id))?, &conf)?;
        Ok(PairObservation {
            ref_frame_id: ref_id,
            src_frame_id: src_id,
            src_in_src,
            src_in_ref,
        })
    }

    pub fn write_pair(&self, obs: &PairObservation) -> Result<()> {
        write_pfm(&self.pair(obs.ref_frame_id, obs.src_frame_id), &pointmap_to_pfm(&obs.src_in_ref).0)
    }

    pub fn write_pointmap(&self, id: FrameId, pm: &PointMap) -> Result<()> {
        let (p, c) = pointmap_to_pfm(pm);
        write_pfm(&self.pointmap(id), &p)?;
        write_pfm(&self.confidence(id), &c)
    }
}

/// Frames read from `frames/<clip>/<index>.png` of a dataset.
pub struct DiskFrameProvider {
    pub layout: DatasetLayout,
}

impl FrameProvider for DiskFrameProvider {
    fn fetch(&self, frame: &PlannedFrame) -> Result<Image> {
        self.layout.read_frame(frame)
    }
}
