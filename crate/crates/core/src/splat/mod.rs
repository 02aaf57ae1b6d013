//! Differentiable Gaussian splatting.
//!
//! Gaussians are projected with the local affine approximation of the
//! perspective map, sorted once per view by camera depth and composited front
//! to back per pixel. Tiles only bin Gaussians by screen footprint; every pixel
//! walks the same globally sorted order, so tiling does not change the result.

mod backward;

use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix2x3};
use rayon::prelude::*;

use crate::gaussian::{sigmoid, GaussianCloud, SH_C0};
use crate::geom::{quat_to_matrix, Intrinsics, Mat3, Pose, Vec3};
use crate::imaging::{DepthKind, DepthMap, Image};

pub use backward::{render_backward, RenderGrad, SplatGrad};

pub const NEAR: f64 = 0.01;
/// Isotropic screen-space blur added to every projected covariance, in px².
pub const BLUR: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance would fall below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Jacobians are evaluated with the view direction clamped to this multiple of the half field of view.
const FRUSTUM_MARGIN: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub background: Vec3,
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: Vec3::zeros(),
            tile_size: 16,
        }
    }
}

/// Linear color (may leave `[0, 1]` before clamping), expected depth
/// `Σ wᵢ zᵢ` without normalization (0 on empty pixels) and accumulated alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl RenderOutput {
    pub fn image(&self) -> Image {
        Image::from_f64_clamped(self.width, self.height, 3, &self.color)
    }

    /// Depth normalized by alpha where alpha exceeds `min_alpha`; other pixels invalid.
    pub fn depth_map(&self, min_alpha: f64) -> DepthMap {
        let valid: Vec<bool> = self
            .alpha
            .iter()
            .zip(&self.depth)
            .map(|(a, d)| *a > min_alpha && *d > 0.0)
            .collect();
        let data = self
            .depth
            .iter()
            .zip(&self.alpha)
            .zip(&valid)
            .map(|((d, a), ok)| if *ok { d / a } else { 0.0 })
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

/// Screen-space data of one Gaussian for the current view.
#[derive(Debug, Clone)]
pub(crate) struct Projected {
    pub visible: bool,
    pub mean: [f64; 2],
    /// Inverse 2D covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub p_cam: Vec3,
    pub sigma_cam: Mat3,
    pub jacobian: Matrix2x3<f64>,
    /// Whether the Jacobian used a clamped view direction, per image axis.
    pub clamped: [bool; 2],
    pub color: Vec3,
    pub opacity: f64,
    pub rotation: Mat3,
    pub scale: Vec3,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]` of the footprint.
    pub bbox: [usize; 4],
}

impl Projected {
    fn hidden() -> Self {
        Self {
            visible: false,
            mean: [0.0; 2],
            conic: [0.0; 3],
            p_cam: Vec3::zeros(),
            sigma_cam: Mat3::zeros(),
            jacobian: Matrix2x3::zeros(),
            clamped: [false; 2],
            color: Vec3::zeros(),
            opacity: 0.0,
            rotation: Mat3::identity(),
            scale: Vec3::zeros(),
            bbox: [0; 4],
        }
    }

    /// Alpha at a pixel center, or `None` when the Gaussian is skipped there.
    /// Also returns the unclamped `σ·G` and the Gaussian value `G`.
    #[inline]
    pub fn alpha_at(&self, px: usize, py: usize) -> Option<(f64, f64, f64, f64)> {
        if px < self.bbox[0] || px > self.bbox[1] || py < self.bbox[2] || py > self.bbox[3] {
            return None;
        }
        let dx = px as f64 + 0.5 - self.mean[0];
        let dy = py as f64 + 0.5 - self.mean[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power > 0.0 {
            return None;
        }
        let g = power.exp();
        let raw = self.opacity * g;
        let alpha = raw.min(MAX_ALPHA);
        if alpha < MIN_ALPHA {
            return None;
        }
        Some((alpha, raw, g, power))
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct RenderState {
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) tile_size: usize,
    pub(crate) count: usize,
    pub(crate) pose: Pose,
    pub(crate) intrinsics: Intrinsics,
    pub(crate) background: Vec3,
    pub(crate) projected: Vec<Projected>,
    /// Gaussian indices per tile in global depth order.
    pub(crate) tiles: Vec<Vec<u32>>,
    /// Per pixel: length of the tile-list prefix that was composited.
    pub(crate) last: Vec<u32>,
    pub(crate) final_t: Vec<f64>,
}

fn project(g: &GaussianCloud, i: usize, world_to_cam: &Mat3, cam_center: &Vec3, k: &Intrinsics) -> Projected {
    let p = world_to_cam * (g.centers[i] - cam_center);
    if !(p.z >= NEAR) {
        return Projected::hidden();
    }
    let f = k.focal;
    let (cx, cy) = k.principal();
    let rotation = match quat_to_matrix(&g.rotations[i]) {
        Ok(r) => r,
        Err(_) => return Projected::hidden(),
    };
    let scale = g.scale(i);
    let m = rotation * Mat3::from_diagonal(&scale);
    let sigma_cam = world_to_cam * (m * m.transpose()) * world_to_cam.transpose();

    let lim = [
        FRUSTUM_MARGIN * k.width as f64 * 0.5 / f,
        FRUSTUM_MARGIN * k.height as f64 * 0.5 / f,
    ];
    let ratio = [p.x / p.z, p.y / p.z];
    let clamped = [ratio[0].abs() > lim[0], ratio[1].abs() > lim[1]];
    let tx = ratio[0].clamp(-lim[0], lim[0]) * p.z;
    let ty = ratio[1].clamp(-lim[1], lim[1]) * p.z;
    let iz = 1.0 / p.z;
    let jacobian = Matrix2x3::new(f * iz, 0.0, -f * tx * iz * iz, 0.0, f * iz, -f * ty * iz * iz);
    let cov = jacobian * sigma_cam * jacobian.transpose() + Matrix2::identity() * BLUR;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return Projected::hidden();
    }
    let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
    let opacity = sigmoid(g.opacity_logits[i]);
    let mean = [f * ratio[0] + cx, f * ratio[1] + cy];

    // footprint where alpha can reach the skip threshold: the bounding box of
    // the ellipse dᵀ Σ⁻¹ d <= 2 ln(255 σ)
    let reach = 2.0 * (opacity / MIN_ALPHA).ln();
    if !(reach > 0.0) || !mean.iter().all(|v| v.is_finite()) {
        return Projected::hidden();
    }
    let hx = (reach * cov[(0, 0)]).sqrt() + 1e-9;
    let hy = (reach * cov[(1, 1)]).sqrt() + 1e-9;
    // pixel centers sit at index + 0.5
    let x0 = (mean[0] - hx - 0.5).ceil();
    let x1 = (mean[0] + hx - 0.5).floor();
    let y0 = (mean[1] - hy - 0.5).ceil();
    let y1 = (mean[1] + hy - 0.5).floor();
    if x1 < 0.0 || y1 < 0.0 || x0 > (k.width - 1) as f64 || y0 > (k.height - 1) as f64 || x0 > x1 || y0 > y1 {
        return Projected::hidden();
    }
    let clip = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
    Projected {
        visible: true,
        mean,
        conic,
        p_cam: p,
        sigma_cam,
        jacobian,
        clamped,
        color: g.sh_dc[i].map(|s| SH_C0 * s + 0.5),
        opacity,
        rotation,
        scale,
        bbox: [
            clip(x0, k.width - 1),
            clip(x1, k.width - 1),
            clip(y0, k.height - 1),
            clip(y1, k.height - 1),
        ],
    }
}

/// Depth order with ties broken by the Gaussian's own parameters, so that
/// the composited result does not depend on the input order.
fn depth_order(g: &GaussianCloud, proj: &[Projected]) -> Vec<u32> {
    let mut keyed: Vec<(u32, [f64; 15])> = (0..proj.len())
        .filter(|&i| proj[i].visible)
        .map(|i| {
            let mut k = [0.0; 15];
            k[0] = proj[i].p_cam.z;
            k[1..4].copy_from_slice(g.centers[i].as_slice());
            k[4..7].copy_from_slice(g.log_scales[i].as_slice());
            k[7..11].copy_from_slice(&g.rotations[i]);
            k[11] = g.opacity_logits[i];
            k[12..15].copy_from_slice(g.sh_dc[i].as_slice());
            (i as u32, k)
        })
        .collect();
    keyed.sort_unstable_by(|(ia, ka), (ib, kb)| {
        ka.iter()
            .zip(kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(ia.cmp(ib))
    });
    keyed.into_iter().map(|(i, _)| i).collect()
}

pub fn render(g: &GaussianCloud, pose: &Pose, k: &Intrinsics, settings: &RenderSettings) -> RenderOutput {
    render_with_state(g, pose, k, settings).0
}

pub fn render_with_state(
    g: &GaussianCloud,
    pose: &Pose,
    k: &Intrinsics,
    settings: &RenderSettings,
) -> (RenderOutput, RenderState) {
    let (w, h) = (k.width, k.height);
    let ts = settings.tile_size.max(1);
    let world_to_cam = pose.rotation.transpose();
    let projected: Vec<Projected> = (0..g.len())
        .into_par_iter()
        .map(|i| project(g, i, &world_to_cam, &pose.translation, k))
        .collect();

    let (tx, ty) = (w.div_ceil(ts), h.div_ceil(ts));
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tx * ty];
    for i in depth_order(g, &projected) {
        let b = projected[i as usize].bbox;
        for ty_ in b[2] / ts..=b[3] / ts {
            for tx_ in b[0] / ts..=b[1] / ts {
                tiles[ty_ * tx + tx_].push(i);
            }
        }
    }

    struct TileOut {
        color: Vec<[f64; 3]>,
        depth: Vec<f64>,
        final_t: Vec<f64>,
        last: Vec<u32>,
    }
    let bg = settings.background;
    let outs: Vec<TileOut> = (0..tiles.len())
        .into_par_iter()
        .map(|t| {
            let (x0, y0) = ((t % tx) * ts, (t / tx) * ts);
            let (x1, y1) = ((x0 + ts).min(w), (y0 + ts).min(h));
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TileOut {
                color: Vec::with_capacity(n),
                depth: Vec::with_capacity(n),
                final_t: Vec::with_capacity(n),
                last: Vec::with_capacity(n),
            };
            for py in y0..y1 {
                for px in x0..x1 {
                    let mut t_ = 1.0;
                    let mut c = [0.0; 3];
                    let mut d = 0.0;
                    let mut last = 0u32;
                    for (n, &gi) in tiles[t].iter().enumerate() {
                        let p = &projected[gi as usize];
                        let Some((alpha, ..)) = p.alpha_at(px, py) else {
                            continue;
                        };
                        let next = t_ * (1.0 - alpha);
                        if next < MIN_TRANSMITTANCE {
                            break;
                        }
                        let wgt = alpha * t_;
                        for ch in 0..3 {
                            c[ch] += wgt * p.color[ch];
                        }
                        d += wgt * p.p_cam.z;
                        t_ = next;
                        last = n as u32 + 1;
                    }
                    for ch in 0..3 {
                        c[ch] += t_ * bg[ch];
                    }
                    out.color.push(c);
                    out.depth.push(d);
                    out.final_t.push(t_);
                    out.last.push(last);
                }
            }
            out
        })
        .collect();

    let mut color = vec![0.0; w * h * 3];
    let mut depth = vec![0.0; w * h];
    let mut alpha = vec![0.0; w * h];
    let mut final_t = vec![1.0; w * h];
    let mut last = vec![0u32; w * h];
    for (t, out) in outs.into_iter().enumerate() {
        let (x0, y0) = ((t % tx) * ts, (t / tx) * ts);
        let x1 = (x0 + ts).min(w);
        let tw = x1 - x0;
        for (k_, c) in out.color.iter().enumerate() {
            let (px, py) = (x0 + k_ % tw, y0 + k_ / tw);
            let idx = py * w + px;
            color[idx * 3..idx * 3 + 3].copy_from_slice(c);
            depth[idx] = out.depth[k_];
            alpha[idx] = 1.0 - out.final_t[k_];
            final_t[idx] = out.final_t[k_];
            last[idx] = out.last[k_];
        }
    }

    let state = RenderState {
        width: w,
        height: h,
        tile_size: ts,
        count: g.len(),
        pose: *pose,
        intrinsics: *k,
        background: bg,
        projected,
        tiles,
        last,
        final_t,
    };
    (
        RenderOutput {
            width: w,
            height: h,
            color,
            depth,
            alpha,
        },
        state,
    )
}
