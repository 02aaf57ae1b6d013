//! Test-view evaluation with the trained scene frozen.

use crate::error::Result;
use crate::gaussian::GaussianCloud;
use crate::geom::{Intrinsics, Pose, Vec3};
use crate::imaging::Image;
use crate::splat::{render_backward, render_with_state, RenderSettings};

use super::adam::Adam;
use super::loss::{image_terms, LossWeights};
use super::metrics::{image_ssim, psnr};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub steps: usize,
    /// Rotation step in radians.
    pub lr_rotation: f64,
    /// Translation step as a fraction of `extent`.
    pub lr_translation: f64,
    /// Scene size used to scale translation steps.
    pub extent: f64,
    /// Both rates decay exponentially to this fraction by the last step.
    pub final_lr_factor: f64,
    /// Consecutive loss increases that count as divergence.
    pub patience: usize,
    pub background: [f64; 3],
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr_rotation: 2e-3,
            lr_translation: 2e-3,
            extent: 1.0,
            final_lr_factor: 0.01,
            patience: 100,
            background: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub pose: Pose,
    pub psnr: f64,
    pub ssim: f64,
    pub loss: f64,
    pub steps: usize,
    pub diverged: bool,
}

/// Optimizes the camera pose of `image` against the frozen cloud, starting at
/// `init`, with an L1 plus D-SSIM photometric loss. Returns the best pose seen
/// and the metrics of the render there.
pub fn eval_test_view(g: &GaussianCloud, image: &Image, init: &Pose, k: &Intrinsics, opts: &EvalOptions) -> Result<EvalResult> {
    let settings = RenderSettings {
        background: Vec3::from(opts.background),
        ..RenderSettings::default()
    };
    let weights = LossWeights {
        depth: 0.0,
        tv: 0.0,
        distort: 0.0,
        ..LossWeights::default()
    };
    let mut adam = Adam::new(6, 1.0, 1e-15);
    let mut twist = [0.0; 6];
    let mut pose = *init;
    let mut best = (f64::INFINITY, pose);
    let mut prev = f64::INFINITY;
    let mut rising = 0;
    let mut diverged = false;
    let mut steps = 0;
    for step in 0..=opts.steps {
        let (out, state) = render_with_state(g, &pose, k, &settings);
        let (terms, grad) = image_terms(&out, image, None, &weights);
        if terms.total < best.0 {
            best = (terms.total, pose);
        }
        rising = if terms.total > prev { rising + 1 } else { 0 };
        prev = terms.total;
        if rising >= opts.patience {
            log::warn!("pose optimization diverged after {step} steps, keeping the best pose");
            diverged = true;
            break;
        }
        if step == opts.steps {
            break;
        }
        let sg = render_backward(&state, g, &pose, &grad)?;
        let decay = opts.final_lr_factor.powf(step as f64 / opts.steps.max(1) as f64);
        let before = twist;
        adam.step(&mut twist, &sg.pose);
        let d: Vec<f64> = (0..6)
            .map(|i| {
                let lr = if i < 3 { opts.lr_translation * opts.extent } else { opts.lr_rotation };
                (twist[i] - before[i]) * lr * decay
            })
            .collect();
        pose = pose.retract(&Vec3::new(d[0], d[1], d[2]), &Vec3::new(d[3], d[4], d[5]));
        steps = step + 1;
    }
    let (loss, pose) = best;
    let out = crate::splat::render(g, &pose, k, &settings).image();
    Ok(EvalResult {
        pose,
        psnr: psnr(&out, image),
        ssim: image_ssim(&out, image),
        loss,
        steps,
        diverged,
    })
}
