//! Canonical Gaussian parameters.
//!
//! Scales and opacities are stored in the unconstrained form the optimizer works
//! on (log-scale, opacity logit), which is also the layout of the 3DGS PLY
//! format. Accessors return the activated values.

use crate::error::{Error, Result};
use crate::geom::{Quat, Vec3};

/// Zeroth-order real spherical harmonic.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn rgb_to_sh(c: f64) -> f64 {
    (c - 0.5) / SH_C0
}

pub fn sh_to_rgb(sh: f64) -> f64 {
    SH_C0 * sh + 0.5
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    pub centers: Vec<Vec3>,
    pub log_scales: Vec<Vec3>,
    /// `[w, x, y, z]`, unit norm.
    pub rotations: Vec<Quat>,
    pub opacity_logits: Vec<f64>,
    /// Degree-0 SH coefficients per RGB channel.
    pub sh_dc: Vec<Vec3>,
}

impl GaussianCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            centers: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            sh_dc: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Adds a Gaussian from activated parameters.
    pub fn push(&mut self, center: Vec3, scale: Vec3, rotation: Quat, opacity: f64, rgb: Vec3) {
        self.centers.push(center);
        self.log_scales.push(scale.map(f64::ln));
        self.rotations.push(rotation);
        self.opacity_logits.push(logit(opacity));
        self.sh_dc.push(rgb.map(rgb_to_sh));
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        self.log_scales[i].map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn color(&self, i: usize) -> Vec3 {
        self.sh_dc[i].map(sh_to_rgb)
    }

    /// Keeps the Gaussians whose flag is set.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        fn filter<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut i = 0;
            v.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        }
        filter(&mut self.centers, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.rotations, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.sh_dc, keep);
    }

    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                *q = q.map(|v| v / n);
            } else {
                *q = [1.0, 0.0, 0.0, 0.0];
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if [
            self.log_scales.len(),
            self.rotations.len(),
            self.opacity_logits.len(),
            self.sh_dc.len(),
        ]
        .iter()
        .any(|&m| m != n)
        {
            return Err(Error::InvalidArgument("gaussian arrays differ in length".into()));
        }
        for i in 0..n {
            let q = &self.rotations[i];
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "gaussian {i} rotation norm {norm}"
                )));
            }
            let finite = self.centers[i].iter().all(|v| v.is_finite())
                && self.log_scales[i].iter().all(|v| v.is_finite())
                && self.opacity_logits[i].is_finite()
                && self.sh_dc[i].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidArgument(format!("gaussian {i} is not finite")));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounds of the centers.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.centers.first()?;
        Some(self.centers.iter().fold((first, first), |(lo, hi), c| {
            (lo.inf(c), hi.sup(c))
        }))
    }
}

/// Gradients with the same layout as [`GaussianCloud`]'s stored parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CloudGrad {
    pub centers: Vec<Vec3>,
    pub log_scales: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub opacity_logits: Vec<f64>,
    pub sh_dc: Vec<Vec3>,
}

impl CloudGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            centers: vec![Vec3::zeros(); n],
            log_scales: vec![Vec3::zeros(); n],
            rotations: vec![[0.0; 4]; n],
            opacity_logits: vec![0.0; n],
            sh_dc: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn add_assign(&mut self, other: &CloudGrad) {
        for i in 0..self.len() {
            self.centers[i] += other.centers[i];
            self.log_scales[i] += other.log_scales[i];
            for c in 0..4 {
                self.rotations[i][c] += other.rotations[i][c];
            }
            self.opacity_logits[i] += other.opacity_logits[i];
            self.sh_dc[i] += other.sh_dc[i];
        }
    }

    pub fn is_zero(&self) -> bool {
        self.centers.iter().all(|v| v.iter().all(|x| *x == 0.0))
            && self.log_scales.iter().all(|v| v.iter().all(|x| *x == 0.0))
            && self.rotations.iter().all(|q| q.iter().all(|x| *x == 0.0))
            && self.opacity_logits.iter().all(|x| *x == 0.0)
            && self.sh_dc.iter().all(|v| v.iter().all(|x| *x == 0.0))
    }
}
