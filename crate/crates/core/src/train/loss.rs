//! The training objective and its gradients.

use serde::{Deserialize, Serialize};

use crate::field::{Deformation, DistortionField};
use crate::imaging::{DepthMap, Image};
use crate::splat::{RenderGrad, RenderOutput};

use super::ssim::ssim;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub ssim: f64,
    pub depth: f64,
    pub tv: f64,
    pub distort: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 0.8,
            ssim: 0.2,
            depth: 0.05,
            tv: 1e-4,
            distort: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.rgb, self.ssim, self.depth, self.tv, self.distort];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(crate::Error::InvalidArgument(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted loss terms and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rgb: f64,
    /// `1 - SSIM`.
    pub ssim: f64,
    pub depth: f64,
    pub tv: f64,
    pub distort: f64,
    pub total: f64,
}

impl LossTerms {
    fn finish(&mut self, w: &LossWeights) {
        self.total = w.rgb * self.rgb + w.ssim * self.ssim + w.depth * self.depth + w.tv * self.tv + w.distort * self.distort;
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub terms: LossTerms,
    pub render_grad: RenderGrad,
    /// Gradient on the offsets evaluated at the input stamp, when given.
    pub offset_grad: Option<Deformation>,
    /// Gradient on the field parameters from the grid regularizer only.
    pub field_grad: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Photometric and depth terms for one rendered view. The rendered depth is
/// compared, unnormalized, with the prior on its valid pixels.
pub fn image_terms(render: &RenderOutput, target: &Image, prior: Option<&DepthMap>, w: &LossWeights) -> (LossTerms, RenderGrad) {
    assert_eq!((render.width, render.height), (target.width, target.height), "render and target differ in size");
    assert_eq!(target.channels, 3, "targets are RGB");
    let t = target.to_f64();
    let n = t.len() as f64;
    let mut terms = LossTerms::default();
    let mut color = vec![0.0; t.len()];
    for (k, (c, y)) in render.color.iter().zip(&t).enumerate() {
        let d = c - y;
        terms.rgb += d.abs();
        color[k] = w.rgb * sign(d) / n;
    }
    terms.rgb /= n;

    if w.ssim > 0.0 {
        let mut g = vec![0.0; t.len()];
        let s = ssim(&render.color, &t, render.width, render.height, 3, Some(&mut g));
        terms.ssim = 1.0 - s;
        for (c, gs) in color.iter_mut().zip(&g) {
            *c -= w.ssim * gs;
        }
    } else {
        terms.ssim = 1.0 - ssim(&render.color, &t, render.width, render.height, 3, None);
    }

    let mut depth = Vec::new();
    if let Some(prior) = prior {
        assert_eq!((prior.width, prior.height), (render.width, render.height), "depth prior differs in size");
        let count = prior.valid_count();
        if count > 0 {
            depth = vec![0.0; render.depth.len()];
            for (k, ok) in prior.valid.iter().enumerate() {
                if *ok {
                    let d = render.depth[k] - prior.data[k];
                    terms.depth += d.abs();
                    depth[k] = w.depth * sign(d) / count as f64;
                }
            }
            terms.depth /= count as f64;
        }
    }
    terms.finish(w);
    (
        terms,
        RenderGrad {
            color,
            depth,
            alpha: Vec::new(),
        },
    )
}

/// Full objective: image terms, grid total variation of `field` and the L1
/// penalty on `origin_offsets`, the offsets the field produces at the input
/// stamp for a batch of Gaussians.
pub fn loss(
    render: &RenderOutput,
    target: &Image,
    prior: Option<&DepthMap>,
    origin_offsets: Option<&Deformation>,
    field: Option<&DistortionField>,
    w: &LossWeights,
) -> LossOutput {
    let (mut terms, render_grad) = image_terms(render, target, prior, w);
    let mut field_grad = Vec::new();
    if let Some(field) = field {
        field_grad = vec![0.0; field.param_count()];
        terms.tv = field.total_variation(Some(&mut field_grad));
        for g in &mut field_grad {
            *g *= w.tv;
        }
    }
    let offset_grad = origin_offsets.map(|d| {
        terms.distort = d.mean_l1();
        let k = w.distort / d.len().max(1) as f64;
        Deformation {
            dx: d.dx.iter().map(|v| v.map(|x| k * sign(x))).collect(),
            dr: d.dr.iter().map(|q| q.map(|x| k * sign(x))).collect(),
            ds: d.ds.iter().map(|v| v.map(|x| k * sign(x))).collect(),
        }
    });
    terms.finish(w);
    LossOutput {
        terms,
        render_grad,
        offset_grad,
        field_grad,
    }
}
