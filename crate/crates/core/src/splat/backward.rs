//! Reverse pass of the splatting renderer.

use nalgebra::{Matrix2, Matrix2x3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{CloudGrad, GaussianCloud, SH_C0};
use crate::geom::{skew, Mat3, Pose, Quat, Vec3};

use super::{Projected, RenderState};

/// Upstream gradients; an empty vector means zero.
#[derive(Debug, Clone, Default)]
pub struct RenderGrad {
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatGrad {
    pub cloud: CloudGrad,
    /// Twist `(ρ, φ)` of a right perturbation `pose · exp(δ)`, see [`Pose::retract`].
    pub pose: [f64; 6],
}

/// Screen-space gradients accumulated per Gaussian.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

fn check(state: &RenderState, g: &GaussianCloud, pose: &Pose, grad: &RenderGrad) -> Result<()> {
    if g.len() != state.count {
        return Err(Error::ForwardStateMismatch(format!(
            "forward pass saw {} gaussians, backward got {}",
            state.count,
            g.len()
        )));
    }
    if *pose != state.pose {
        return Err(Error::ForwardStateMismatch("camera pose differs".into()));
    }
    let n = state.width * state.height;
    for (name, v, per) in [("color", &grad.color, 3), ("depth", &grad.depth, 1), ("alpha", &grad.alpha, 1)] {
        if !v.is_empty() && v.len() != n * per {
            return Err(Error::ForwardStateMismatch(format!(
                "{name} gradient has {} values for a {}x{} image",
                v.len(),
                state.width,
                state.height
            )));
        }
    }
    Ok(())
}

/// Per-tile reverse compositing; returns gradients aligned with the tile list.
fn tile_backward(state: &RenderState, t: usize, grad: &RenderGrad) -> Vec<ScreenGrad> {
    let ts = state.tile_size;
    let (w, h) = (state.width, state.height);
    let tx = w.div_ceil(ts);
    let (x0, y0) = ((t % tx) * ts, (t / tx) * ts);
    let (x1, y1) = ((x0 + ts).min(w), (y0 + ts).min(h));
    let list = &state.tiles[t];
    let mut out = vec![ScreenGrad::default(); list.len()];
    let bg = state.background;

    for py in y0..y1 {
        for px in x0..x1 {
            let idx = py * w + px;
            let gc = if grad.color.is_empty() {
                [0.0; 3]
            } else {
                [grad.color[idx * 3], grad.color[idx * 3 + 1], grad.color[idx * 3 + 2]]
            };
            let gd = grad.depth.get(idx).copied().unwrap_or(0.0);
            let ga = grad.alpha.get(idx).copied().unwrap_or(0.0);
            if gc == [0.0; 3] && gd == 0.0 && ga == 0.0 {
                continue;
            }
            let t_final = state.final_t[idx];
            let mut t_ = t_final;
            let mut behind_c = [bg[0], bg[1], bg[2]];
            let mut behind_d = 0.0;
            for n in (0..state.last[idx] as usize).rev() {
                let p: &Projected = &state.projected[list[n] as usize];
                let Some((alpha, raw, gval, _)) = p.alpha_at(px, py) else {
                    continue;
                };
                t_ /= 1.0 - alpha;
                let wgt = alpha * t_;
                let s = &mut out[n];
                let mut g_alpha = 0.0;
                for ch in 0..3 {
                    s.color[ch] += wgt * gc[ch];
                    g_alpha += gc[ch] * (p.color[ch] - behind_c[ch]);
                    behind_c[ch] = alpha * p.color[ch] + (1.0 - alpha) * behind_c[ch];
                }
                g_alpha += gd * (p.p_cam.z - behind_d);
                g_alpha *= t_;
                g_alpha += ga * t_final / (1.0 - alpha);
                behind_d = alpha * p.p_cam.z + (1.0 - alpha) * behind_d;
                s.depth += wgt * gd;

                if raw < super::MAX_ALPHA {
                    s.opacity += g_alpha * gval;
                    let g_power = g_alpha * alpha;
                    let dx = px as f64 + 0.5 - p.mean[0];
                    let dy = py as f64 + 0.5 - p.mean[1];
                    let [a, b, c] = p.conic;
                    // power = -(a dx² + c dy²)/2 - b dx dy, with d = pixel - mean
                    s.mean[0] += g_power * (a * dx + b * dy);
                    s.mean[1] += g_power * (b * dx + c * dy);
                    s.conic[0] += g_power * (-0.5 * dx * dx);
                    s.conic[1] += g_power * (-dx * dy);
                    s.conic[2] += g_power * (-0.5 * dy * dy);
                }
            }
        }
    }
    out
}

/// Gradient of the loss with respect to an unnormalized quaternion, given the
/// gradient with respect to its rotation matrix.
pub(crate) fn quat_grad(q: &Quat, gr: &Mat3) -> Quat {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let g = |i: usize, j: usize| gr[(i, j)];
    let gu = [
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
        2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2)),
        2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2)),
        2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)),
    ];
    let u = [w, x, y, z];
    let dot: f64 = (0..4).map(|k| u[k] * gu[k]).sum();
    std::array::from_fn(|k| (gu[k] - u[k] * dot) / n)
}

struct GaussianGrads {
    center: Vec3,
    log_scale: Vec3,
    rotation: Quat,
    opacity_logit: f64,
    sh: Vec3,
    pose: [f64; 6],
}

fn gaussian_backward(p: &Projected, s: &ScreenGrad, quat: &Quat, state: &RenderState, world_to_cam: &Mat3) -> GaussianGrads {
    let f = state.intrinsics.focal;
    let pc = p.p_cam;
    let iz = 1.0 / pc.z;

    // conic = cov⁻¹, so dL/dcov = -Q Gq Q with the off-diagonal gradient split evenly
    let q = Matrix2::new(p.conic[0], p.conic[1], p.conic[1], p.conic[2]);
    let gq = Matrix2::new(s.conic[0], 0.5 * s.conic[1], 0.5 * s.conic[1], s.conic[2]);
    let g_cov = -(q * gq * q);

    let j = &p.jacobian;
    let g_sigma_cam: Mat3 = j.transpose() * g_cov * j;
    let g_j: Matrix2x3<f64> = 2.0 * g_cov * j * p.sigma_cam;

    let mut g_p = Vec3::zeros();
    g_p.x += s.mean[0] * f * iz;
    g_p.y += s.mean[1] * f * iz;
    g_p.z -= (s.mean[0] * pc.x + s.mean[1] * pc.y) * f * iz * iz;
    g_p.z += s.depth;
    g_p.z -= (g_j[(0, 0)] + g_j[(1, 1)]) * f * iz * iz;
    for (row, axis) in [(0usize, 0usize), (1, 1)] {
        let gj = g_j[(row, 2)];
        if p.clamped[row] {
            // J[row, 2] = -f·lim/z with the clamped ratio lim
            let lim = j[(row, 2)] * pc.z / -f;
            g_p.z += gj * f * lim * iz * iz;
        } else {
            g_p[axis] -= gj * f * iz * iz;
            g_p.z += gj * 2.0 * f * pc[axis] * iz * iz * iz;
        }
    }

    // Σ_cam = W Σ Wᵀ and Σ = M Mᵀ with M = R S
    let g_sigma = world_to_cam.transpose() * g_sigma_cam * world_to_cam;
    let m = p.rotation * Mat3::from_diagonal(&p.scale);
    let g_m = 2.0 * g_sigma * m;
    let rt_gm = p.rotation.transpose() * g_m;
    let log_scale = Vec3::from_fn(|k, _| rt_gm[(k, k)] * p.scale[k]);
    let g_rot = g_m * Mat3::from_diagonal(&p.scale);

    let mut pose = [0.0; 6];
    for k in 0..3 {
        pose[k] = -g_p[k];
    }
    let g_phi = g_p.cross(&pc);
    for k in 0..3 {
        let e = skew(&Vec3::from_fn(|i, _| if i == k { 1.0 } else { 0.0 }));
        let d = -e * p.sigma_cam + p.sigma_cam * e;
        pose[3 + k] = g_phi[k] + g_sigma_cam.component_mul(&d).sum();
    }

    GaussianGrads {
        center: world_to_cam.transpose() * g_p,
        log_scale,
        rotation: quat_grad(quat, &g_rot),
        opacity_logit: s.opacity * p.opacity * (1.0 - p.opacity),
        sh: Vec3::new(s.color[0], s.color[1], s.color[2]) * SH_C0,
        pose,
    }
}

pub fn render_backward(state: &RenderState, g: &GaussianCloud, pose: &Pose, grad: &RenderGrad) -> Result<SplatGrad> {
    check(state, g, pose, grad)?;
    let tiles: Vec<Vec<ScreenGrad>> = (0..state.tiles.len())
        .into_par_iter()
        .map(|t| tile_backward(state, t, grad))
        .collect();
    // tile order is fixed, so the reduction is reproducible
    let mut screen = vec![ScreenGrad::default(); g.len()];
    for (t, list) in tiles.iter().enumerate() {
        for (n, sg) in list.iter().enumerate() {
            screen[state.tiles[t][n] as usize].add(sg);
        }
    }

    let world_to_cam = pose.rotation.transpose();
    let per: Vec<Option<GaussianGrads>> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let p = &state.projected[i];
            if !p.visible {
                return None;
            }
            let gg = gaussian_backward(p, &screen[i], &g.rotations[i], state, &world_to_cam);
            Some(gg)
        })
        .collect();

    let mut out = SplatGrad {
        cloud: CloudGrad::zeros(g.len()),
        pose: [0.0; 6],
    };
    for (i, gg) in per.into_iter().enumerate() {
        let Some(gg) = gg else { continue };
        out.cloud.centers[i] = gg.center;
        out.cloud.log_scales[i] = gg.log_scale;
        out.cloud.rotations[i] = gg.rotation;
        out.cloud.opacity_logits[i] = gg.opacity_logit;
        out.cloud.sh_dc[i] = gg.sh;
        for k in 0..6 {
            out.pose[k] += gg.pose[k];
        }
    }
    Ok(out)
}
