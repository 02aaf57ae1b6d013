//! Per-frame image-space warps that vanish at the input stamp.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::geom::FrameStamp;
use crate::imaging::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistortionMode {
    None,
    SmoothWarp,
}

/// Sinusoidal backward warp. The displacement amplitude is `amplitude` times
/// the longer image side, scaled by the gain `g(t) = |t|`; phases shift with
/// the stamp so that every frame sees a different warp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionSpec {
    pub mode: DistortionMode,
    pub amplitude: f64,
    /// Periods across the image.
    pub frequency: f64,
    pub phase: [f64; 2],
}

impl Default for DistortionSpec {
    fn default() -> Self {
        Self {
            mode: DistortionMode::SmoothWarp,
            amplitude: 0.02,
            frequency: 1.0,
            phase: [0.3, 1.1],
        }
    }
}

impl DistortionSpec {
    pub fn none() -> Self {
        Self {
            mode: DistortionMode::None,
            ..Self::default()
        }
    }

    pub fn gain(&self, stamp: FrameStamp) -> f64 {
        match self.mode {
            DistortionMode::None => 0.0,
            DistortionMode::SmoothWarp => stamp.norm(),
        }
    }

    /// Displacement in pixels at continuous coordinates `(u, v)`.
    pub fn displacement(&self, stamp: FrameStamp, u: f64, v: f64, width: usize, height: usize) -> (f64, f64) {
        let g = self.gain(stamp);
        if g == 0.0 {
            return (0.0, 0.0);
        }
        let a = self.amplitude * width.max(height) as f64 * g;
        let (x, y) = (u / width as f64, v / height as f64);
        (
            a * (TAU * self.frequency * y + self.phase[0] + PI * (stamp.ti + stamp.tj)).sin(),
            a * (TAU * self.frequency * x + self.phase[1] + PI * (stamp.ti - stamp.tj)).sin(),
        )
    }

    /// Resamples `img` at the displaced pixel centers. Zero gain returns the input unchanged.
    pub fn apply(&self, img: &Image, stamp: FrameStamp) -> Image {
        if self.gain(stamp) == 0.0 {
            return img.clone();
        }
        let (w, h) = (img.width, img.height);
        let mut data = Vec::with_capacity(img.data.len());
        for j in 0..h {
            for i in 0..w {
                let (u, v) = (i as f64 + 0.5, j as f64 + 0.5);
                let (du, dv) = self.displacement(stamp, u, v, w, h);
                for c in 0..img.channels {
                    data.push(img.sample_bilinear(u + du, v + dv, c) as f32);
                }
            }
        }
        Image::new(w, h, img.channels, data).expect("same shape")
    }
}
