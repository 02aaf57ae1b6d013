//! Confidence-weighted similarity alignment between two pointmaps of the same pixels.

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Similarity, Vec3};
use crate::imaging::PointMap;
use crate::trajectory::FrameId;

/// Pixel weights below this are ignored.
pub const MIN_WEIGHT: f64 = 1e-6;

/// The source view's pixels expressed in both cameras of a pair.
///
/// `src_in_src` carries the source view's points in its own camera frame,
/// `src_in_ref` the same pixels expressed in the reference camera frame.
/// Aligning the first onto the second yields the source camera's pose in the
/// reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PairObservation {
    pub ref_frame_id: FrameId,
    pub src_frame_id: FrameId,
    pub src_in_src: PointMap,
    pub src_in_ref: PointMap,
}

/// Source-to-reference transform `y = scale · (R x + T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
    /// Weighted RMS alignment error in reference units.
    pub residual: f64,
}

impl RelativePose {
    pub fn similarity(&self) -> Similarity {
        Similarity {
            scale: self.scale,
            rotation: self.rotation,
            translation: self.scale * self.translation,
        }
    }

    pub fn from_similarity(s: &Similarity, residual: f64) -> Self {
        Self {
            rotation: s.rotation,
            translation: s.translation / s.scale,
            scale: s.scale,
            residual,
        }
    }
}

/// Closed-form weighted Umeyama: `argmin Σ w ‖s R x + t − y‖²`.
pub fn weighted_similarity(src: &[Vec3], dst: &[Vec3], weights: &[f64]) -> Result<(Similarity, f64)> {
    assert_eq!(src.len(), dst.len());
    assert_eq!(src.len(), weights.len());
    let used = weights.iter().filter(|w| **w >= MIN_WEIGHT).count();
    if used < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            found: used,
        });
    }
    let active = || {
        src.iter()
            .zip(dst)
            .zip(weights)
            .filter(|(_, w)| **w >= MIN_WEIGHT)
            .map(|((x, y), w)| (x, y, *w))
    };

    let total: f64 = active().map(|(_, _, w)| w).sum();
    let (mut mu_x, mut mu_y) = (Vec3::zeros(), Vec3::zeros());
    for (x, y, w) in active() {
        mu_x += w * x;
        mu_y += w * y;
    }
    mu_x /= total;
    mu_y /= total;

    let mut cov = Mat3::zeros();
    let mut var_x = 0.0;
    for (x, y, w) in active() {
        let dx = x - mu_x;
        let dy = y - mu_y;
        cov += w * dy * dx.transpose();
        var_x += w * dx.norm_squared();
    }
    cov /= total;
    var_x /= total;

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = svd.singular_values;
    let (max_sv, min_idx) = (d.max(), d.imin());
    let sorted_mid = {
        let mut s = [d[0], d[1], d[2]];
        s.sort_by(|a, b| b.total_cmp(a));
        s[1]
    };
    if !(max_sv > 0.0) || sorted_mid <= 1e-12 * max_sv {
        return Err(Error::DegenerateGeometry(
            "weighted covariance has rank below 2".into(),
        ));
    }

    let mut fix = [1.0; 3];
    if (u * v_t).determinant() < 0.0 {
        fix[min_idx] = -1.0;
    }
    let s_mat = Mat3::from_diagonal(&Vec3::new(fix[0], fix[1], fix[2]));
    let rotation = u * s_mat * v_t;
    let trace: f64 = (0..3).map(|k| d[k] * fix[k]).sum();
    let scale = trace / var_x;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateGeometry(format!("scale estimate {scale}")));
    }
    let translation = mu_y - scale * rotation * mu_x;
    let sim = Similarity {
        scale,
        rotation,
        translation,
    };
    let sq: f64 = active().map(|(x, y, w)| w * (sim.apply(x) - y).norm_squared()).sum();
    Ok((sim, (sq / total).sqrt()))
}

/// Per-pixel weights of a pair: product of both confidences.
pub fn pair_weights(pair: &PairObservation) -> Vec<f64> {
    pair.src_in_src
        .confidence
        .iter()
        .zip(&pair.src_in_ref.confidence)
        .map(|(a, b)| a * b)
        .collect()
}

pub fn relative_pose(pair: &PairObservation) -> Result<RelativePose> {
    let (a, b) = (&pair.src_in_src, &pair.src_in_ref);
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::InvalidArgument(format!(
            "pair {}->{}: pointmaps are {}x{} and {}x{}",
            pair.src_frame_id, pair.ref_frame_id, a.width, a.height, b.width, b.height
        )));
    }
    let w = pair_weights(pair);
    let (sim, residual) = weighted_similarity(&a.points, &b.points, &w)?;
    Ok(RelativePose::from_similarity(&sim, residual))
}
