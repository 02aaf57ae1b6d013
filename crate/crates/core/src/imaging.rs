//! Raster containers: color images, depth maps and pointmaps.

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Row-major, top-left origin, interleaved channels, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "image data has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value.clamp(0.0, 1.0); width * height * channels],
        }
    }

    /// Clamps each value into `[0, 1]`; non-finite values become 0.
    pub fn from_f64_clamped(width: usize, height: usize, channels: usize, data: &[f64]) -> Self {
        Self {
            width,
            height,
            channels,
            data: data
                .iter()
                .map(|&v| if v.is_finite() { v.clamp(0.0, 1.0) as f32 } else { 0.0 })
                .collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let base = (y * self.width + x) * self.channels;
        if self.channels == 1 {
            let v = self.data[base];
            [v, v, v]
        } else {
            [self.data[base], self.data[base + 1], self.data[base + 2]]
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Bilinear lookup at continuous coordinates (pixel centers at `+0.5`), edge-clamped.
    pub fn sample_bilinear(&self, u: f64, v: f64, c: usize) -> f64 {
        let x = (u - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (v - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p = |xx: usize, yy: usize| self.get(xx, yy, c) as f64;
        (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0)) + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthKind {
    Absolute,
    Relative,
    Calibrated,
}

/// Per-pixel depth with a validity mask. Values of invalid pixels are unspecified.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
    pub kind: DepthKind,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>, kind: DepthKind) -> Result<Self> {
        let valid = vec![true; data.len()];
        Self::with_mask(width, height, data, valid, kind)
    }

    pub fn with_mask(
        width: usize,
        height: usize,
        data: Vec<f64>,
        valid: Vec<bool>,
        kind: DepthKind,
    ) -> Result<Self> {
        if data.len() != width * height || valid.len() != data.len() {
            return Err(Error::InvalidArgument(format!(
                "depth map {width}x{height} has {} values and {} mask entries",
                data.len(),
                valid.len()
            )));
        }
        for (v, ok) in data.iter().zip(&valid) {
            if *ok && !v.is_finite() {
                return Err(Error::InvalidArgument("non-finite depth".into()));
            }
            if *ok && kind != DepthKind::Relative && *v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{kind:?} depth must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            data,
            valid,
            kind,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Per-pixel 3D points in a camera frame with non-negative confidences; zero marks invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vec3>,
    pub confidence: Vec<f64>,
}

impl PointMap {
    pub fn new(width: usize, height: usize, points: Vec<Vec3>, confidence: Vec<f64>) -> Result<Self> {
        if points.len() != width * height || confidence.len() != points.len() {
            return Err(Error::InvalidArgument(format!(
                "pointmap {width}x{height} has {} points and {} confidences",
                points.len(),
                confidence.len()
            )));
        }
        if confidence.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "confidences must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            points,
            confidence,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.confidence.iter().filter(|c| **c > 0.0).count()
    }

    /// Depth (z) of every valid point, scaled by `scale`.
    pub fn depth(&self, scale: f64) -> DepthMap {
        let valid: Vec<bool> = self
            .confidence
            .iter()
            .zip(&self.points)
            .map(|(c, p)| *c > 0.0 && p.z > 0.0 && p.z.is_finite())
            .collect();
        let data = self
            .points
            .iter()
            .zip(&valid)
            .map(|(p, ok)| if *ok { p.z * scale } else { 0.0 })
            .collect();
        DepthMap {
            width: self.width,
            height: self.height,
            data,
            valid,
            kind: DepthKind::Absolute,
        }
    }
}
