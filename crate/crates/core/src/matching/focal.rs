//! Shared focal length from a pointmap by Weiszfeld iterations.
//!
//! Minimizes `Σ w · |(u, v) - f · (X/Z, Y/Z)|` over `f`, where `(u, v)` are
//! pixel-center coordinates relative to the image center. Each iteration is a
//! weighted least-squares solve with weights `w / residual`.

use crate::error::{Error, Result};
use crate::geom::Intrinsics;
use crate::imaging::PointMap;

pub const MIN_VALID_PIXELS: usize = 100;
const MIN_DEPTH: f64 = 1e-9;
const MAX_ITERS: usize = 500;

/// Centered pixel coordinates, normalized image coordinates and weight of each usable pixel.
fn observations(pm: &PointMap) -> Vec<([f64; 2], [f64; 2], f64)> {
    let (cx, cy) = (pm.width as f64 * 0.5, pm.height as f64 * 0.5);
    let mut out = Vec::new();
    for j in 0..pm.height {
        for i in 0..pm.width {
            let k = j * pm.width + i;
            let w = pm.confidence[k];
            let p = pm.points[k];
            if w > 0.0 && p.z > MIN_DEPTH && p.iter().all(|v| v.is_finite()) {
                out.push((
                    [i as f64 + 0.5 - cx, j as f64 + 0.5 - cy],
                    [p.x / p.z, p.y / p.z],
                    w,
                ));
            }
        }
    }
    out
}

/// Weighted L1 objective value at a given focal; exposed for diagnostics and tests.
pub fn focal_objective(pm: &PointMap, f: f64) -> f64 {
    observations(pm)
        .iter()
        .map(|(u, p, w)| w * (u[0] - f * p[0]).hypot(u[1] - f * p[1]))
        .sum()
}

pub fn estimate_focal(pm: &PointMap) -> Result<Intrinsics> {
    let obs = observations(pm);
    if obs.len() < MIN_VALID_PIXELS {
        return Err(Error::InsufficientPoints {
            needed: MIN_VALID_PIXELS,
            found: obs.len(),
        });
    }
    let solve = |weight: &dyn Fn(usize) -> f64| {
        let (mut num, mut den) = (0.0, 0.0);
        for (k, (u, p, _)) in obs.iter().enumerate() {
            let w = weight(k);
            num += w * (u[0] * p[0] + u[1] * p[1]);
            den += w * (p[0] * p[0] + p[1] * p[1]);
        }
        (num, den)
    };

    let (num, den) = solve(&|k| obs[k].2);
    let total_w: f64 = obs.iter().map(|o| o.2).sum();
    if den <= 1e-18 * total_w {
        return Err(Error::DegenerateGeometry(
            "all points lie on the optical axis".into(),
        ));
    }
    let mut f = num / den;
    let scale = obs
        .iter()
        .map(|(u, _, _)| u[0].abs().max(u[1].abs()))
        .fold(1.0, f64::max);
    let floor = 1e-12 * scale;

    for _ in 0..MAX_ITERS {
        let cur = f;
        let (num, den) = solve(&|k| {
            let (u, p, w) = &obs[k];
            let r = (u[0] - cur * p[0]).hypot(u[1] - cur * p[1]).max(floor);
            w / r
        });
        if den <= 0.0 {
            break;
        }
        let next = num / den;
        let done = (next - f).abs() <= 1e-13 * f.abs();
        f = next;
        if done {
            break;
        }
    }

    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::DegenerateGeometry(format!(
            "focal estimate {f} is not positive"
        )));
    }
    Intrinsics::new(f, pm.width, pm.height)
}
