//! Gaussian initialization from a registered point cloud.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::geom::Vec3;
use crate::matching::MergedPoint;

pub const DEFAULT_MAX_POINTS: usize = 100_000;
pub const INIT_OPACITY: f64 = 0.1;

fn extent(points: &[Vec3]) -> (Vec3, Vec3) {
    points.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

fn voxel_key(p: &Vec3, origin: &Vec3, size: f64) -> [i64; 3] {
    [0, 1, 2].map(|a| ((p[a] - origin[a]) / size).floor() as i64)
}

fn occupied(points: &[MergedPoint], origin: &Vec3, size: f64) -> usize {
    let cells: HashSet<[i64; 3]> = points.iter().map(|p| voxel_key(&p.position, origin, size)).collect();
    cells.len()
}

/// Voxel centroids and mean colors for a given voxel size, in voxel-key order.
fn voxelize(points: &[MergedPoint], origin: &Vec3, size: f64) -> Vec<(Vec3, Vec3)> {
    let mut cells: BTreeMap<[i64; 3], (Vec3, Vec3, usize)> = BTreeMap::new();
    for p in points {
        let e = cells.entry(voxel_key(&p.position, origin, size)).or_insert((Vec3::zeros(), Vec3::zeros(), 0));
        e.0 += p.position;
        e.1 += Vec3::new(p.color[0] as f64, p.color[1] as f64, p.color[2] as f64);
        e.2 += 1;
    }
    cells
        .into_values()
        .map(|(s, c, n)| {
            let n = n as f64;
            (s / n, c / n)
        })
        .collect()
}

/// Mean distance to the `k` nearest other points, using a uniform hash grid.
pub fn mean_knn_distance(points: &[Vec3], k: usize) -> Vec<f64> {
    let n = points.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let (lo, hi) = extent(points);
    let span = hi - lo;
    let max_span = span.amax().max(f64::MIN_POSITIVE);
    // cell size from the density over the non-degenerate axes
    let dims: Vec<f64> = span.iter().copied().filter(|d| *d > 1e-9 * max_span).collect();
    let cell = if dims.is_empty() {
        1.0
    } else {
        let vol: f64 = dims.iter().product();
        (vol / n as f64).powf(1.0 / dims.len() as f64).max(1e-12 * max_span)
    };
    let key = |p: &Vec3| [0, 1, 2].map(|a| ((p[a] - lo[a]) / cell).floor() as i64);
    let mut grid: std::collections::HashMap<[i64; 3], Vec<usize>> = std::collections::HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let kk = k.min(n - 1);
    use rayon::prelude::*;
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let c = key(p);
            let mut best: Vec<f64> = Vec::with_capacity(kk + 1);
            let mut r: i64 = 0;
            loop {
                // visit the shell of cells at Chebyshev distance r
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            if let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                                for &j in ids {
                                    if j == i {
                                        continue;
                                    }
                                    let d = (points[j] - p).norm();
                                    if best.len() < kk || d < best[kk - 1] {
                                        let pos = best.partition_point(|v| *v <= d);
                                        best.insert(pos, d);
                                        best.truncate(kk);
                                    }
                                }
                            }
                        }
                    }
                }
                // everything outside the visited cube is at least r·cell away
                if best.len() == kk && best[kk - 1] <= r as f64 * cell {
                    break;
                }
                r += 1;
            }
            best.iter().sum::<f64>() / kk as f64
        })
        .collect()
}

/// One Gaussian per occupied voxel. The voxel size is `s0 · 1.5^k`, where `s0`
/// only merges coincident points and `k` is the smallest exponent (found by
/// bisection) that keeps the count within `max_points`.
pub fn init_gaussians(points: &[MergedPoint], max_points: usize) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::EmptyScene);
    }
    if max_points == 0 {
        return Err(Error::InvalidArgument("max_points must be positive".into()));
    }
    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let (lo, hi) = extent(&positions);
    let diag = (hi - lo).norm();
    let origin = lo;
    let s0 = (diag * 1e-12).max(f64::MIN_POSITIVE);
    let size_at = |k: i32| s0 * 1.5f64.powi(k);
    let fits = |k: i32| occupied(points, &origin, size_at(k)) <= max_points;
    let k = if fits(0) {
        0
    } else {
        // grow until a single voxel (or the budget) is reached, then bisect
        let (mut bad, mut good) = (0, 1);
        while !fits(good) {
            bad = good;
            good *= 2;
        }
        while good - bad > 1 {
            let mid = (bad + good) / 2;
            if fits(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    };
    let voxels = voxelize(points, &origin, size_at(k));
    let centers: Vec<Vec3> = voxels.iter().map(|v| v.0).collect();
    let fallback = if diag > 0.0 { diag * 1e-3 } else { 1e-3 };
    let knn = mean_knn_distance(&centers, 3);
    let mut g = GaussianCloud::with_capacity(centers.len());
    for ((c, color), d) in voxels.iter().zip(knn) {
        let s = if d > 0.0 { d } else { fallback };
        g.push(*c, Vec3::repeat(s), [1.0, 0.0, 0.0, 0.0], INIT_OPACITY, color.map(|v| v.clamp(0.0, 1.0)));
    }
    Ok(g)
}
