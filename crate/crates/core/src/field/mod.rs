//! Per-frame distortion field.
//!
//! A 5D query `(x, y, z, ti, tj)` is encoded by nine axis-pair feature planes
//! per resolution level. Bilinear samples of the planes are multiplied
//! channel-wise within a level and the levels are concatenated. A small MLP
//! merges the features and three heads decode position, rotation and scale
//! offsets for each Gaussian.

mod mlp;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{CloudGrad, GaussianCloud};
use crate::geom::{FrameStamp, Quat, Vec3};
use crate::rng::Rng;

use mlp::{relu, Linear};

/// Axis pairs of the planes; axes 0..3 are spatial, 3 is `ti`, 4 is `tj`.
pub const AXIS_PAIRS: [(usize, usize); 9] = [
    (0, 1),
    (0, 2),
    (1, 2),
    (0, 3),
    (1, 3),
    (2, 3),
    (0, 4),
    (1, 4),
    (2, 4),
];

/// Scales below this are clamped in additive mode.
const MIN_ADDITIVE_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Feature channels per plane vertex.
    pub hidden: usize,
    /// Vertices per plane axis at level 1.
    pub resolution: usize,
    pub levels: Vec<usize>,
    pub mlp_width: usize,
    /// Apply `s + Δs` instead of `s · exp(Δs)`.
    pub additive_scale: bool,
    pub init_noise: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            resolution: 32,
            levels: vec![1, 2],
            mlp_width: 32,
            additive_scale: false,
            init_noise: 1e-2,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.mlp_width == 0 {
            return Err(Error::InvalidArgument("field widths must be positive".into()));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidArgument("field resolution must be at least 2".into()));
        }
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::InvalidArgument("field levels must be positive".into()));
        }
        Ok(())
    }
}

struct Corners {
    idx: [usize; 4],
    wts: [f64; 4],
    fu: f64,
    fv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneInfo {
    pub axes: (usize, usize),
    pub level: usize,
    /// Vertices along each axis.
    pub resolution: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    planes: Vec<PlaneInfo>,
    merge: [Linear; 2],
    heads: [[Linear; 2]; 3],
    total: usize,
}

impl Layout {
    fn new(cfg: &FieldConfig) -> Self {
        let h = cfg.hidden;
        let mut offset = 0;
        let mut planes = Vec::new();
        for &level in &cfg.levels {
            for axes in AXIS_PAIRS {
                let res = cfg.resolution * level;
                planes.push(PlaneInfo {
                    axes,
                    level,
                    resolution: res,
                    offset,
                });
                offset += res * res * h;
            }
        }
        let mut layer = |input, output| {
            let l = Linear {
                input,
                output,
                offset,
            };
            offset += l.param_count();
            l
        };
        let w = cfg.mlp_width;
        let merge = [layer(h * cfg.levels.len(), w), layer(w, h)];
        let heads = [
            [layer(h, w), layer(w, 3)],
            [layer(h, w), layer(w, 4)],
            [layer(h, w), layer(w, 3)],
        ];
        Self {
            planes,
            merge,
            heads,
            total: offset,
        }
    }
}

/// Per-Gaussian offsets produced by the field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Deformation {
    pub dx: Vec<Vec3>,
    pub dr: Vec<Quat>,
    pub ds: Vec<Vec3>,
}

impl Deformation {
    pub fn zeros(n: usize) -> Self {
        Self {
            dx: vec![Vec3::zeros(); n],
            dr: vec![[0.0; 4]; n],
            ds: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.dx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx.is_empty()
    }

    /// Mean over Gaussians of the summed L1 norms of the three offsets.
    pub fn mean_l1(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..self.len())
            .map(|i| {
                self.dx[i].abs().sum() + self.dr[i].iter().map(|v| v.abs()).sum::<f64>() + self.ds[i].abs().sum()
            })
            .sum();
        total / self.len() as f64
    }
}

/// The spatial normalization box: the given bounds grown by 5% about their center.
pub fn normalization_box(lo: Vec3, hi: Vec3) -> (Vec3, Vec3) {
    let center = (lo + hi) * 0.5;
    let half = ((hi - lo) * 0.5 * 1.05).map(|v| v.max(1e-6));
    (center - half, center + half)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionField {
    pub config: FieldConfig,
    /// Spatial box mapped to `[-1, 1]^3`.
    pub bounds: (Vec3, Vec3),
    /// Plane features followed by the MLP weights.
    pub params: Vec<f64>,
    layout: Layout,
}

struct Query {
    coords: [f64; 5],
    /// `d coords / d center` per spatial axis; zero where clamped.
    jacobian: [f64; 3],
}

impl DistortionField {
    /// Planes start at 1 plus small noise; hidden layers use uniform fan-in
    /// initialization and the last layer of every head is zero.
    pub fn new(config: FieldConfig, bounds: (Vec3, Vec3), rng: &mut Rng) -> Result<Self> {
        let mut field = Self::zeroed(config, bounds)?;
        let noise = Normal::new(0.0, field.config.init_noise.max(0.0)).unwrap();
        let h = field.config.hidden;
        for p in &field.layout.planes {
            for v in &mut field.params[p.offset..p.offset + p.resolution * p.resolution * h] {
                *v = 1.0 + noise.sample(rng);
            }
        }
        let mut hidden = vec![field.layout.merge[0], field.layout.merge[1]];
        hidden.extend(field.layout.heads.iter().map(|h| h[0]));
        for l in hidden {
            let bound = 1.0 / (l.input as f64).sqrt();
            for v in &mut field.params[l.offset..l.offset + l.param_count()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(field)
    }

    /// All parameters zero; deformation is identically zero.
    pub fn zeroed(config: FieldConfig, bounds: (Vec3, Vec3)) -> Result<Self> {
        config.validate()?;
        let (lo, hi) = bounds;
        if (0..3).any(|a| !(hi[a] > lo[a])) {
            return Err(Error::InvalidArgument("field bounds must have positive extent".into()));
        }
        let layout = Layout::new(&config);
        Ok(Self {
            params: vec![0.0; layout.total],
            config,
            bounds,
            layout,
        })
    }

    /// Rebuilds a field from stored parameters, checking the count against the config.
    pub fn from_parts(config: FieldConfig, bounds: (Vec3, Vec3), params: Vec<f64>) -> Result<Self> {
        let mut f = Self::zeroed(config, bounds)?;
        if params.len() != f.params.len() {
            return Err(Error::InvalidArgument(format!(
                "field expects {} parameters, got {}",
                f.params.len(),
                params.len()
            )));
        }
        f.params = params;
        Ok(f)
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn planes(&self) -> &[PlaneInfo] {
        &self.layout.planes
    }

    /// Number of leading parameters that are plane features.
    pub fn plane_param_count(&self) -> usize {
        self.layout.merge[0].offset
    }

    pub fn feature_dim(&self) -> usize {
        self.config.hidden * self.config.levels.len()
    }

    pub fn plane_features(&self, plane: usize) -> &[f64] {
        let p = &self.layout.planes[plane];
        &self.params[p.offset..p.offset + p.resolution * p.resolution * self.config.hidden]
    }

    pub fn plane_features_mut(&mut self, plane: usize) -> &mut [f64] {
        let p = self.layout.planes[plane];
        let n = p.resolution * p.resolution * self.config.hidden;
        &mut self.params[p.offset..p.offset + n]
    }

    fn query(&self, center: &Vec3, stamp: FrameStamp) -> Query {
        let (lo, hi) = self.bounds;
        let mut coords = [0.0; 5];
        let mut jacobian = [0.0; 3];
        for a in 0..3 {
            let d = 2.0 / (hi[a] - lo[a]);
            let q = (center[a] - lo[a]) * d - 1.0;
            if q > -1.0 && q < 1.0 {
                coords[a] = q;
                jacobian[a] = d;
            } else {
                coords[a] = q.clamp(-1.0, 1.0);
                // NaN centers land here and must not poison the planes
                if coords[a].is_nan() {
                    coords[a] = 0.0;
                }
            }
        }
        coords[3] = stamp.ti.clamp(-1.0, 1.0);
        coords[4] = stamp.tj.clamp(-1.0, 1.0);
        Query { coords, jacobian }
    }

    /// Bilinear footprint of a query on one plane.
    fn corners(&self, p: &PlaneInfo, coords: &[f64; 5]) -> Corners {
        let n = p.resolution;
        let u = (coords[p.axes.0] + 1.0) * 0.5 * (n - 1) as f64;
        let v = (coords[p.axes.1] + 1.0) * 0.5 * (n - 1) as f64;
        let i0 = (u.floor() as usize).min(n - 2);
        let j0 = (v.floor() as usize).min(n - 2);
        let fu = u - i0 as f64;
        let fv = v - j0 as f64;
        let h = self.config.hidden;
        let base = |i: usize, j: usize| p.offset + (j * n + i) * h;
        Corners {
            idx: [base(i0, j0), base(i0 + 1, j0), base(i0, j0 + 1), base(i0 + 1, j0 + 1)],
            wts: [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv],
            fu,
            fv,
        }
    }

    /// Corners of every plane and the `planes × hidden` bilinear samples.
    fn sample_planes(&self, coords: &[f64; 5]) -> (Vec<Corners>, Vec<f64>) {
        let h = self.config.hidden;
        let corners: Vec<Corners> = self.layout.planes.iter().map(|p| self.corners(p, coords)).collect();
        let mut samples = vec![0.0; corners.len() * h];
        for (k, cr) in corners.iter().enumerate() {
            let [p0, p1, p2, p3] = cr.idx.map(|i| &self.params[i..i + h]);
            // lerp form so that constant planes interpolate exactly
            for (c, out) in samples[k * h..(k + 1) * h].iter_mut().enumerate() {
                let top = p0[c] + cr.fu * (p1[c] - p0[c]);
                let bottom = p2[c] + cr.fu * (p3[c] - p2[c]);
                *out = top + cr.fv * (bottom - top);
            }
        }
        (corners, samples)
    }

    fn combine(&self, samples: &[f64]) -> Vec<f64> {
        let h = self.config.hidden;
        let per_level = AXIS_PAIRS.len();
        let mut feat = vec![1.0; self.feature_dim()];
        for (k, s) in samples.chunks(h).enumerate() {
            let level = k / per_level;
            for (f, v) in feat[level * h..(level + 1) * h].iter_mut().zip(s) {
                *f *= v;
            }
        }
        feat
    }

    fn encode_query(&self, coords: &[f64; 5]) -> Vec<f64> {
        self.combine(&self.sample_planes(coords).1)
    }

    /// Level-concatenated features, `N × (hidden · levels)`.
    pub fn encode(&self, centers: &[Vec3], stamp: FrameStamp) -> Vec<Vec<f64>> {
        centers
            .par_iter()
            .map(|c| self.encode_query(&self.query(c, stamp).coords))
            .collect()
    }

    fn decode(&self, feat: &[f64]) -> (Vec3, Quat, Vec3) {
        let w = self.config.mlp_width;
        let h = self.config.hidden;
        let mut hidden = vec![0.0; w];
        let mut fd = vec![0.0; h];
        self.layout.merge[0].forward(&self.params, feat, &mut hidden);
        relu(&mut hidden);
        self.layout.merge[1].forward(&self.params, &hidden, &mut fd);
        let mut outs = [[0.0; 4]; 3];
        for (k, head) in self.layout.heads.iter().enumerate() {
            head[0].forward(&self.params, &fd, &mut hidden);
            relu(&mut hidden);
            head[1].forward(&self.params, &hidden, &mut outs[k][..head[1].output]);
        }
        (
            Vec3::new(outs[0][0], outs[0][1], outs[0][2]),
            outs[1],
            Vec3::new(outs[2][0], outs[2][1], outs[2][2]),
        )
    }

    /// Raw offsets for each center at the given stamp.
    pub fn deltas(&self, centers: &[Vec3], stamp: FrameStamp) -> Deformation {
        let out: Vec<(Vec3, Quat, Vec3)> = centers
            .par_iter()
            .map(|c| self.decode(&self.encode_query(&self.query(c, stamp).coords)))
            .collect();
        let mut d = Deformation::zeros(0);
        for (x, r, s) in out {
            d.dx.push(x);
            d.dr.push(r);
            d.ds.push(s);
        }
        d
    }

    /// Distorted cloud for a frame stamp. Opacity and color are untouched.
    pub fn deform(&self, g: &GaussianCloud, stamp: FrameStamp) -> (GaussianCloud, Deformation) {
        let d = self.deltas(&g.centers, stamp);
        let mut out = g.clone();
        for i in 0..g.len() {
            out.centers[i] += d.dx[i];
            if d.dr[i] != [0.0; 4] {
                let q: Quat = std::array::from_fn(|c| g.rotations[i][c] + d.dr[i][c]);
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.rotations[i] = if n > 0.0 { q.map(|v| v / n) } else { [1.0, 0.0, 0.0, 0.0] };
            }
            out.log_scales[i] = if self.config.additive_scale {
                (g.log_scales[i].map(f64::exp) + d.ds[i]).map(|s| s.max(MIN_ADDITIVE_SCALE).ln())
            } else {
                g.log_scales[i] + d.ds[i]
            };
        }
        (out, d)
    }

    fn backward_one(&self, center: &Vec3, stamp: FrameStamp, gx: &Vec3, gr: &Quat, gs: &Vec3, grad: &mut [f64]) -> Vec3 {
        let h = self.config.hidden;
        let w = self.config.mlp_width;
        let q = self.query(center, stamp);
        let (corners, samples) = self.sample_planes(&q.coords);
        let feat = self.combine(&samples);

        // forward again, keeping activations
        let mut h0 = vec![0.0; w];
        self.layout.merge[0].forward(&self.params, &feat, &mut h0);
        let mut h0r = h0.clone();
        relu(&mut h0r);
        let mut fd = vec![0.0; h];
        self.layout.merge[1].forward(&self.params, &h0r, &mut fd);

        let mut gfd = vec![0.0; h];
        let mut tmp = vec![0.0; h];
        let mut gh = vec![0.0; w];
        let ups: [&[f64]; 3] = [gx.as_slice(), gr.as_slice(), gs.as_slice()];
        for (k, head) in self.layout.heads.iter().enumerate() {
            if ups[k].iter().all(|v| *v == 0.0) {
                continue;
            }
            let mut a = vec![0.0; w];
            head[0].forward(&self.params, &fd, &mut a);
            let mut ar = a.clone();
            relu(&mut ar);
            head[1].backward(&self.params, &ar, ups[k], grad, &mut gh);
            for (g, a) in gh.iter_mut().zip(&a) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            head[0].backward(&self.params, &fd, &gh, grad, &mut tmp);
            for c in 0..h {
                gfd[c] += tmp[c];
            }
        }
        if gfd.iter().all(|v| *v == 0.0) {
            return Vec3::zeros();
        }
        self.layout.merge[1].backward(&self.params, &h0r, &gfd, grad, &mut gh);
        for (g, a) in gh.iter_mut().zip(&h0) {
            if *a <= 0.0 {
                *g = 0.0;
            }
        }
        let mut gfeat = vec![0.0; feat.len()];
        self.layout.merge[0].backward(&self.params, &feat, &gh, grad, &mut gfeat);

        // through the per-level plane products
        let per_level = AXIS_PAIRS.len();
        let mut gcoord = [0.0; 5];
        let mut gv = vec![0.0; per_level * h];
        for level in 0..self.config.levels.len() {
            let first = level * per_level;
            gv.fill(0.0);
            for c in 0..h {
                let g = gfeat[level * h + c];
                if g == 0.0 {
                    continue;
                }
                // product of the other planes' samples via prefix/suffix products
                let s = |k: usize| samples[(first + k) * h + c];
                let mut prefix = [1.0; AXIS_PAIRS.len() + 1];
                for k in 0..per_level {
                    prefix[k + 1] = prefix[k] * s(k);
                }
                let mut suffix = 1.0;
                for k in (0..per_level).rev() {
                    gv[k * h + c] = g * prefix[k] * suffix;
                    suffix *= s(k);
                }
            }
            for k in 0..per_level {
                let p = &self.layout.planes[first + k];
                let cr = &corners[first + k];
                let gvk = &gv[k * h..(k + 1) * h];
                let scale = 0.5 * (p.resolution - 1) as f64;
                let (mut du, mut dv) = (0.0, 0.0);
                {
                    let [p0, p1, p2, p3] = cr.idx.map(|i| &self.params[i..i + h]);
                    for c in 0..h {
                        du += gvk[c] * ((1.0 - cr.fv) * (p1[c] - p0[c]) + cr.fv * (p3[c] - p2[c]));
                        dv += gvk[c] * ((1.0 - cr.fu) * (p2[c] - p0[c]) + cr.fu * (p3[c] - p1[c]));
                    }
                }
                for m in 0..4 {
                    let w = cr.wts[m];
                    for (gp, g) in grad[cr.idx[m]..cr.idx[m] + h].iter_mut().zip(gvk) {
                        *gp += g * w;
                    }
                }
                gcoord[p.axes.0] += du * scale;
                gcoord[p.axes.1] += dv * scale;
            }
        }
        Vec3::new(
            gcoord[0] * q.jacobian[0],
            gcoord[1] * q.jacobian[1],
            gcoord[2] * q.jacobian[2],
        )
    }

    /// Backpropagates gradients on the offsets of each center. Returns the
    /// gradients on the centers and on the field parameters.
    pub fn backward_deltas(&self, centers: &[Vec3], stamp: FrameStamp, grad: &Deformation) -> (Vec<Vec3>, Vec<f64>) {
        assert_eq!(centers.len(), grad.len(), "one offset gradient per center");
        let n = centers.len();
        if n == 0 {
            return (Vec::new(), vec![0.0; self.param_count()]);
        }
        // a fixed chunking keeps the reduction order independent of the thread count
        let chunks = n.div_ceil(2048).clamp(1, 8);
        let size = n.div_ceil(chunks);
        let parts: Vec<(Vec<Vec3>, Vec<f64>)> = (0..chunks)
            .into_par_iter()
            .map(|k| {
                let mut pg = vec![0.0; self.param_count()];
                let range = k * size..((k + 1) * size).min(n);
                let cg = range
                    .map(|i| self.backward_one(&centers[i], stamp, &grad.dx[i], &grad.dr[i], &grad.ds[i], &mut pg))
                    .collect();
                (cg, pg)
            })
            .collect();
        let mut center_grads = Vec::with_capacity(n);
        let mut param_grads = vec![0.0; self.param_count()];
        for (cg, pg) in parts {
            center_grads.extend(cg);
            for (a, b) in param_grads.iter_mut().zip(&pg) {
                *a += b;
            }
        }
        (center_grads, param_grads)
    }

    /// Gradients on the canonical cloud and the field parameters, given
    /// gradients on the deformed cloud and optionally directly on the offsets.
    pub fn backward(
        &self,
        g: &GaussianCloud,
        stamp: FrameStamp,
        deformation: &Deformation,
        grad_deformed: &CloudGrad,
        grad_offsets: Option<&Deformation>,
    ) -> (CloudGrad, Vec<f64>) {
        let n = g.len();
        let mut canon = grad_deformed.clone();
        let mut gd = grad_offsets.cloned().unwrap_or_else(|| Deformation::zeros(n));
        for i in 0..n {
            gd.dx[i] += grad_deformed.centers[i];

            let q: Quat = std::array::from_fn(|c| g.rotations[i][c] + deformation.dr[i][c]);
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let gq: Quat = if norm > 0.0 {
                let r = q.map(|v| v / norm);
                let gr = &grad_deformed.rotations[i];
                let dot: f64 = (0..4).map(|c| r[c] * gr[c]).sum();
                std::array::from_fn(|c| (gr[c] - r[c] * dot) / norm)
            } else {
                [0.0; 4]
            };
            canon.rotations[i] = gq;
            for c in 0..4 {
                gd.dr[i][c] += gq[c];
            }

            let gls = grad_deformed.log_scales[i];
            if self.config.additive_scale {
                let s = g.log_scales[i].map(f64::exp);
                let mut gl = Vec3::zeros();
                for a in 0..3 {
                    let sp = s[a] + deformation.ds[i][a];
                    if sp > MIN_ADDITIVE_SCALE {
                        gl[a] = gls[a] * s[a] / sp;
                        gd.ds[i][a] += gls[a] / sp;
                    }
                }
                canon.log_scales[i] = gl;
            } else {
                gd.ds[i] += gls;
            }
        }
        let (center_grads, params) = self.backward_deltas(&g.centers, stamp, &gd);
        for (a, b) in canon.centers.iter_mut().zip(&center_grads) {
            *a += b;
        }
        (canon, params)
    }

    /// Sum of absolute differences between neighboring vertices of every plane,
    /// along both plane axes and over all channels. Gradients are added to `grad`.
    pub fn total_variation(&self, mut grad: Option<&mut [f64]>) -> f64 {
        let h = self.config.hidden;
        let mut total = 0.0;
        for p in &self.layout.planes {
            let n = p.resolution;
            let at = |i: usize, j: usize, c: usize| p.offset + (j * n + i) * h + c;
            for j in 0..n {
                for i in 0..n {
                    for c in 0..h {
                        let here = at(i, j, c);
                        for next in [(i + 1 < n).then(|| at(i + 1, j, c)), (j + 1 < n).then(|| at(i, j + 1, c))]
                            .into_iter()
                            .flatten()
                        {
                            let d = self.params[next] - self.params[here];
                            total += d.abs();
                            if let Some(g) = grad.as_deref_mut() {
                                let s = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                                g[next] += s;
                                g[here] -= s;
                            }
                        }
                    }
                }
            }
        }
        total
    }
}

/// The canonical cloud: the deformation is only applied per frame during training.
pub fn canonical(g: &GaussianCloud) -> GaussianCloud {
    g.clone()
}

#[cfg(test)]
mod tests;
