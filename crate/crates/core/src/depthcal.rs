//! Affine calibration of relative monocular depth against absolute depth.
//!
//! `Scale = med(d̂_a / d̂_r)` on median-centered depths, `Shift = med(d_a − Scale·d_r)`
//! on uncentered depths, and the calibrated map is `Scale·d_r + Shift`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DepthKind, DepthMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub scale: f64,
    pub shift: f64,
    pub valid_pixel_count: usize,
}

/// Lower of the two middle elements for even counts. Reorders `v`.
pub fn median(v: &mut [f64]) -> f64 {
    assert!(!v.is_empty(), "median of an empty slice");
    let k = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    *m
}

/// Calibrates `relative` to `absolute` over pixels valid in both maps and in `mask` (if given).
pub fn calibrate(
    absolute: &DepthMap,
    relative: &DepthMap,
    mask: Option<&[bool]>,
) -> Result<(CalibrationResult, DepthMap)> {
    if (absolute.width, absolute.height) != (relative.width, relative.height) {
        return Err(Error::InvalidArgument(format!(
            "depth maps differ in size: {}x{} vs {}x{}",
            absolute.width, absolute.height, relative.width, relative.height
        )));
    }
    if let Some(m) = mask {
        if m.len() != absolute.data.len() {
            return Err(Error::InvalidArgument("mask size differs from depth maps".into()));
        }
    }
    let idx: Vec<usize> = (0..absolute.data.len())
        .filter(|&k| absolute.valid[k] && relative.valid[k] && mask.is_none_or(|m| m[k]))
        .collect();
    if idx.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            found: idx.len(),
        });
    }
    let da: Vec<f64> = idx.iter().map(|&k| absolute.data[k]).collect();
    let dr: Vec<f64> = idx.iter().map(|&k| relative.data[k]).collect();

    let med_a = median(&mut da.clone());
    let med_r = median(&mut dr.clone());
    let (lo, hi) = dr
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let eps = 1e-6 * (hi - lo);

    let mut ratios: Vec<f64> = da
        .iter()
        .zip(&dr)
        .filter_map(|(a, r)| {
            let rc = r - med_r;
            (rc.abs() > eps).then(|| (a - med_a) / rc)
        })
        .collect();
    if ratios.is_empty() {
        return Err(Error::FlatRelativeDepth);
    }
    let scale = median(&mut ratios);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::FlatRelativeDepth);
    }
    let mut residual: Vec<f64> = da.iter().zip(&dr).map(|(a, r)| a - scale * r).collect();
    let shift = median(&mut residual);

    let data = relative
        .data
        .iter()
        .map(|r| scale * r + shift)
        .collect();
    // pixels of the relative map that land at or behind the camera are invalid as absolute depth
    let valid: Vec<bool> = relative
        .valid
        .iter()
        .zip(&data)
        .map(|(ok, d): (&bool, &f64)| *ok && *d > 0.0 && d.is_finite())
        .collect();
    let out = DepthMap {
        width: relative.width,
        height: relative.height,
        data,
        valid,
        kind: DepthKind::Calibrated,
    };
    Ok((
        CalibrationResult {
            scale,
            shift,
            valid_pixel_count: idx.len(),
        },
        out,
    ))
}
