//! Optimization of the canonical Gaussians and the distortion field.
//!
//! Training runs in two phases: a vanilla phase that fits the Gaussians alone,
//! then a joint phase where every frame is rendered through the field at its
//! stamp. Only the canonical cloud is kept for evaluation.

mod adam;
mod eval;
mod init;
mod loss;
mod metrics;
mod ssim;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{normalization_box, DistortionField, FieldConfig};
use crate::gaussian::{CloudGrad, GaussianCloud};
use crate::geom::{FrameStamp, Intrinsics, Pose, Vec3};
use crate::imaging::{DepthMap, Image};
use crate::matching::RegisteredScene;
use crate::rng::{stream, Rng};
use crate::splat::{render_backward, render_with_state, RenderSettings};
use crate::trajectory::{FrameId, FrameRecord};

pub use adam::Adam;
pub use eval::{eval_test_view, EvalOptions, EvalResult};
pub use init::{init_gaussians, mean_knn_distance, DEFAULT_MAX_POINTS, INIT_OPACITY};
pub use loss::{image_terms, loss, LossOutput, LossTerms, LossWeights};
pub use metrics::{image_ssim, mse, psnr, PSNR_CAP};
pub use ssim::ssim;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub position: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
    /// Decays exponentially to a tenth over the joint phase.
    pub field: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            opacity: 0.05,
            scale: 5e-3,
            rotation: 1e-3,
            color: 2.5e-3,
            field: 1.6e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub vanilla_iters: usize,
    pub field_iters: usize,
    pub weights: LossWeights,
    pub lr: LearningRates,
    pub prune_interval: usize,
    pub prune_threshold: f64,
    /// Gaussians sampled per step for the penalty at the input stamp.
    pub distort_batch: usize,
    pub checkpoint_interval: usize,
    /// Voxel budget of the initial cloud.
    pub max_points: usize,
    /// Collapse every stamp onto a single axis.
    pub one_axis: bool,
    pub background: [f64; 3],
    pub field: FieldConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            vanilla_iters: 3000,
            field_iters: 14000,
            weights: LossWeights::default(),
            lr: LearningRates::default(),
            prune_interval: 500,
            prune_threshold: 0.005,
            distort_batch: 4096,
            checkpoint_interval: 1000,
            max_points: DEFAULT_MAX_POINTS,
            one_axis: false,
            background: [0.0; 3],
            field: FieldConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.field.validate()?;
        let lr = &self.lr;
        if [lr.position, lr.opacity, lr.scale, lr.rotation, lr.color, lr.field]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidArgument("learning rates must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(Error::InvalidArgument("prune threshold must lie in [0, 1)".into()));
        }
        if self.max_points == 0 {
            return Err(Error::InvalidArgument("max_points must be positive".into()));
        }
        Ok(())
    }

    pub fn total_iters(&self) -> usize {
        self.vanilla_iters + self.field_iters
    }
}

/// One training frame with its registered pose and optional calibrated depth.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub frame_id: FrameId,
    pub image: Image,
    pub pose: Pose,
    pub stamp: FrameStamp,
    pub depth: Option<DepthMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Vanilla,
    Field,
}

/// Metrics of one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub frame_id: FrameId,
    pub loss: LossTerms,
    pub psnr: f64,
    pub gaussians: usize,
}

pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_checkpoint(&mut self, _iteration: usize, _gaussians: &GaussianCloud, _field: Option<&DistortionField>) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Result of a training run; the field is detached from the canonical cloud.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub gaussians: GaussianCloud,
    pub field: Option<DistortionField>,
    pub history: Vec<LossTerms>,
}

struct Optimizers {
    centers: Adam,
    log_scales: Adam,
    rotations: Adam,
    opacity: Adam,
    color: Adam,
}

impl Optimizers {
    fn new(n: usize, lr: &LearningRates, extent: f64) -> Self {
        const EPS: f64 = 1e-15;
        Self {
            centers: Adam::new(3 * n, lr.position * extent, EPS),
            log_scales: Adam::new(3 * n, lr.scale, EPS),
            rotations: Adam::new(4 * n, lr.rotation, EPS),
            opacity: Adam::new(n, lr.opacity, EPS),
            color: Adam::new(3 * n, lr.color, EPS),
        }
    }

    fn retain(&mut self, keep: &[bool]) {
        self.centers.retain(keep, 3);
        self.log_scales.retain(keep, 3);
        self.rotations.retain(keep, 4);
        self.opacity.retain(keep, 1);
        self.color.retain(keep, 3);
    }

    fn step(&mut self, g: &mut GaussianCloud, grad: &CloudGrad) {
        fn flat3(v: &[Vec3]) -> Vec<f64> {
            v.iter().flat_map(|x| [x[0], x[1], x[2]]).collect()
        }
        fn unflat3(src: &[f64], dst: &mut [Vec3]) {
            for (d, s) in dst.iter_mut().zip(src.chunks(3)) {
                *d = Vec3::new(s[0], s[1], s[2]);
            }
        }
        let mut p = flat3(&g.centers);
        self.centers.step(&mut p, &flat3(&grad.centers));
        unflat3(&p, &mut g.centers);

        let mut p = flat3(&g.log_scales);
        self.log_scales.step(&mut p, &flat3(&grad.log_scales));
        unflat3(&p, &mut g.log_scales);

        let mut p = flat3(&g.sh_dc);
        self.color.step(&mut p, &flat3(&grad.sh_dc));
        unflat3(&p, &mut g.sh_dc);

        let mut p: Vec<f64> = g.rotations.iter().flatten().copied().collect();
        let gr: Vec<f64> = grad.rotations.iter().flatten().copied().collect();
        self.rotations.step(&mut p, &gr);
        for (q, s) in g.rotations.iter_mut().zip(p.chunks(4)) {
            *q = [s[0], s[1], s[2], s[3]];
        }
        g.normalize_rotations();

        self.opacity.step(&mut g.opacity_logits, &grad.opacity_logits);
    }
}

/// Training state; [`Trainer::step`] advances one iteration.
pub struct Trainer {
    cfg: TrainConfig,
    views: Vec<TrainView>,
    intrinsics: Intrinsics,
    settings: RenderSettings,
    pub gaussians: GaussianCloud,
    pub field: Option<DistortionField>,
    optim: Optimizers,
    field_optim: Option<Adam>,
    pub iteration: usize,
    pub history: Vec<LossTerms>,
    extent: f64,
    bounds: (Vec3, Vec3),
    order: Vec<usize>,
    order_pos: usize,
    frame_rng: Rng,
    batch_rng: Rng,
}

impl Trainer {
    pub fn new(gaussians: GaussianCloud, views: Vec<TrainView>, intrinsics: Intrinsics, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        gaussians.validate()?;
        let (lo, hi) = gaussians.bounds().ok_or(Error::EmptyScene)?;
        if views.is_empty() {
            return Err(Error::InvalidArgument("no training views".into()));
        }
        for v in &views {
            if v.image.size() != (intrinsics.width, intrinsics.height) {
                return Err(Error::ResolutionMismatch {
                    frame_id: v.frame_id,
                    expected: (intrinsics.width, intrinsics.height),
                    found: v.image.size(),
                });
            }
        }
        let diag = (hi - lo).norm();
        let extent = if diag > 0.0 { diag } else { 1.0 };
        let optim = Optimizers::new(gaussians.len(), &cfg.lr, extent);
        let settings = RenderSettings {
            background: Vec3::from(cfg.background),
            ..RenderSettings::default()
        };
        Ok(Self {
            frame_rng: stream(cfg.seed, 0),
            batch_rng: stream(cfg.seed, 2),
            bounds: normalization_box(lo, hi),
            cfg,
            views,
            intrinsics,
            settings,
            gaussians,
            field: None,
            optim,
            field_optim: None,
            iteration: 0,
            history: Vec::new(),
            extent,
            order: Vec::new(),
            order_pos: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Diagonal of the initial cloud's bounding box.
    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.total_iters()
    }

    pub fn phase(&self) -> Phase {
        if self.iteration < self.cfg.vanilla_iters {
            Phase::Vanilla
        } else {
            Phase::Field
        }
    }

    fn next_view(&mut self) -> usize {
        if self.order_pos >= self.order.len() {
            self.order = (0..self.views.len()).collect();
            self.order.shuffle(&mut self.frame_rng);
            self.order_pos = 0;
        }
        self.order_pos += 1;
        self.order[self.order_pos - 1]
    }

    fn ensure_field(&mut self) -> Result<()> {
        if self.field.is_none() {
            let mut rng = stream(self.cfg.seed, 1);
            let field = DistortionField::new(self.cfg.field.clone(), self.bounds, &mut rng)?;
            self.field_optim = Some(Adam::new(field.param_count(), self.cfg.lr.field, 1e-15));
            self.field = Some(field);
        }
        Ok(())
    }

    fn stamp_of(&self, v: &TrainView) -> FrameStamp {
        if self.cfg.one_axis {
            v.stamp.one_axis()
        } else {
            v.stamp
        }
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<StepRecord> {
        let phase = self.phase();
        let vi = self.next_view();
        let view = &self.views[vi];
        let stamp = self.stamp_of(view);
        let frame_id = view.frame_id;
        let iteration = self.iteration;

        let (record, grad, field_grad) = match phase {
            Phase::Vanilla => {
                let (out, state) = render_with_state(&self.gaussians, &view.pose, &self.intrinsics, &self.settings);
                let l = loss(&out, &view.image, view.depth.as_ref(), None, None, &self.cfg.weights);
                let sg = render_backward(&state, &self.gaussians, &view.pose, &l.render_grad)?;
                (self.record(iteration, phase, frame_id, &l.terms, &out), sg.cloud, None)
            }
            Phase::Field => {
                self.ensure_field()?;
                let view = &self.views[vi];
                let field = self.field.as_ref().expect("field initialized");
                let (deformed, deformation) = field.deform(&self.gaussians, stamp);
                let (out, state) = render_with_state(&deformed, &view.pose, &self.intrinsics, &self.settings);

                let n = self.gaussians.len();
                let batch: Vec<usize> = if n > self.cfg.distort_batch {
                    rand::seq::index::sample(&mut self.batch_rng, n, self.cfg.distort_batch).into_vec()
                } else {
                    (0..n).collect()
                };
                let batch_centers: Vec<Vec3> = batch.iter().map(|&i| self.gaussians.centers[i]).collect();
                let origin = (!batch.is_empty()).then(|| field.deltas(&batch_centers, FrameStamp::ORIGIN));

                let l = loss(&out, &view.image, view.depth.as_ref(), origin.as_ref(), Some(field), &self.cfg.weights);
                let sg = render_backward(&state, &deformed, &view.pose, &l.render_grad)?;
                let (mut cg, mut pg) = field.backward(&self.gaussians, stamp, &deformation, &sg.cloud, None);
                if let Some(og) = l.offset_grad.as_ref().filter(|_| self.cfg.weights.distort > 0.0) {
                    let (ccg, cpg) = field.backward_deltas(&batch_centers, FrameStamp::ORIGIN, og);
                    for (k, &i) in batch.iter().enumerate() {
                        cg.centers[i] += ccg[k];
                    }
                    for (a, b) in pg.iter_mut().zip(&cpg) {
                        *a += b;
                    }
                }
                for (a, b) in pg.iter_mut().zip(&l.field_grad) {
                    *a += b;
                }
                (self.record(iteration, phase, frame_id, &l.terms, &out), cg, Some(pg))
            }
        };

        if !record.loss.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                snapshot: Box::new(self.gaussians.clone()),
            });
        }

        self.optim.step(&mut self.gaussians, &grad);
        if let (Some(pg), Some(field), Some(opt)) = (field_grad, self.field.as_mut(), self.field_optim.as_mut()) {
            let k = (iteration - self.cfg.vanilla_iters) as f64 / self.cfg.field_iters.max(1) as f64;
            opt.lr = self.cfg.lr.field * 0.1f64.powf(k);
            opt.step(&mut field.params, &pg);
        }

        self.history.push(record.loss);
        self.iteration += 1;
        if self.cfg.prune_interval > 0 && self.iteration % self.cfg.prune_interval == 0 {
            self.prune();
        }
        Ok(record)
    }

    fn record(&self, iteration: usize, phase: Phase, frame_id: FrameId, terms: &LossTerms, out: &crate::splat::RenderOutput) -> StepRecord {
        let target = &self.views.iter().find(|v| v.frame_id == frame_id).expect("view exists").image;
        StepRecord {
            iteration,
            phase,
            frame_id,
            loss: *terms,
            psnr: psnr(&out.image(), target),
            gaussians: self.gaussians.len(),
        }
    }

    /// Drops Gaussians below the opacity threshold; returns how many were removed.
    /// The cloud is never emptied.
    pub fn prune(&mut self) -> usize {
        let keep: Vec<bool> = (0..self.gaussians.len())
            .map(|i| self.gaussians.opacity(i) >= self.cfg.prune_threshold)
            .collect();
        let kept = keep.iter().filter(|k| **k).count();
        if kept == keep.len() || kept == 0 {
            return 0;
        }
        self.gaussians.retain_mask(&keep);
        self.optim.retain(&keep);
        keep.len() - kept
    }

    /// Runs to completion, reporting every step and checkpoint.
    pub fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<()> {
        while !self.is_done() {
            let r = self.step()?;
            observer.on_step(&r);
            if self.cfg.checkpoint_interval > 0 && self.iteration % self.cfg.checkpoint_interval == 0 {
                observer.on_checkpoint(self.iteration, &self.gaussians, self.field.as_ref());
            }
        }
        Ok(())
    }

    pub fn into_model(self) -> TrainedModel {
        TrainedModel {
            gaussians: self.gaussians,
            field: self.field,
            history: self.history,
        }
    }
}

/// Trains from an initial cloud and posed views.
pub fn train_views(
    gaussians: GaussianCloud,
    views: Vec<TrainView>,
    intrinsics: Intrinsics,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainedModel> {
    let mut t = Trainer::new(gaussians, views, intrinsics, cfg.clone())?;
    t.run(observer)?;
    Ok(t.into_model())
}

/// Initializes from the registered cloud and trains on `frames` with the
/// registered poses. `priors` are calibrated depths aligned with `frames`;
/// pass an empty slice to train without depth supervision.
pub fn train(frames: &[FrameRecord], scene: &RegisteredScene, priors: &[DepthMap], cfg: &TrainConfig) -> Result<TrainedModel> {
    if !priors.is_empty() && priors.len() != frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} depth priors for {} frames",
            priors.len(),
            frames.len()
        )));
    }
    let cloud = init_gaussians(&scene.points, cfg.max_points)?;
    let views = frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let pose = *scene.poses.get(f.frame_id).ok_or_else(|| {
                Error::InvalidArgument(format!("frame {} has no registered pose", f.frame_id))
            })?;
            Ok(TrainView {
                frame_id: f.frame_id,
                image: f.image.clone(),
                pose,
                stamp: f.stamp,
                depth: priors.get(k).cloned(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    train_views(cloud, views, scene.intrinsics, cfg, &mut NoObserver)
}
