use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use liftcore::depthcal::{self, CalibrationResult};
use liftcore::field::DistortionField;
use liftcore::geom::Vec3;
use liftcore::io::{self, DatasetLayout, DiskFrameProvider, PoseFile, RelativePoseRecord};
use liftcore::matching::{self, FrameView, RegistrationInput};
use liftcore::splat::{self, RenderSettings};
use liftcore::synth::{self, DistortionMode, Manifest, SynthScene};
use liftcore::train::{self, StepRecord, TrainObserver, TrainView};
use liftcore::trajectory::{self, TrajectoryPlan, INPUT_FRAME};
use liftcore::{DepthKind, FrameStamp, GaussianCloud, Intrinsics, Pose, Similarity};

use crate::config::PipelineConfig;
use crate::{CalibrateArgs, EvalArgs, MatchArgs, PlanArgs, RegisterArgs, RenderArgs, SynthArgs, TrainArgs};

/// Output of `match`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchFile {
    pub extra_edges: usize,
    pub edges: Vec<RelativePoseRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub frames: BTreeMap<usize, CalibrationResult>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub pose_steps: usize,
    pub diverged: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

fn make_plan(cfg: &PipelineConfig, l: Option<usize>, d: Option<usize>, translation: Option<f64>, rotation: Option<f64>) -> Result<TrajectoryPlan> {
    let mut p = cfg.plan;
    p.l = l.unwrap_or(p.l);
    p.directions = d.unwrap_or(p.directions);
    p.translation = translation.unwrap_or(p.translation);
    p.rotation = rotation.unwrap_or(p.rotation);
    Ok(trajectory::plan_articulated(p.l, p.directions, p.step())?)
}

pub fn plan(cfg: &PipelineConfig, a: PlanArgs) -> Result<()> {
    let plan = make_plan(cfg, a.l, a.directions, a.translation, a.rotation)?;
    io::write_json(&a.out, &plan)?;
    println!("{} frames -> {}", plan.len(), a.out.display());
    Ok(())
}

pub fn synth(cfg: &PipelineConfig, a: SynthArgs) -> Result<()> {
    let plan = match &a.plan {
        Some(p) => io::read_json::<TrajectoryPlan>(p)?,
        None => make_plan(cfg, a.l, a.directions, a.translation, None)?,
    };
    let mut s = cfg.synth.clone();
    if let Some(r) = a.resolution {
        s.resolution = r;
        s.focal = None;
    }
    if let Some(d) = &a.distortion {
        s.distortion.mode = serde_json::from_value(serde_json::Value::String(d.clone()))
            .map_err(|_| anyhow!("unknown distortion {d:?}, expected none or smooth-warp"))?;
    }
    if let Some(amp) = a.amplitude {
        s.distortion.amplitude = amp;
    }
    let k = Intrinsics::new(s.focal(), s.resolution, s.resolution)?;
    let opts = synth::EmitOptions {
        seed: cfg.seed,
        eval_views: a.eval_views.unwrap_or(s.eval_views),
        extra_edges: a.extra_edges.unwrap_or(cfg.matching.extra_edges),
    };
    let scene = SynthScene::random(cfg.seed);
    let m = synth::emit_dataset(&scene, &plan, &k, &s.distortion, &opts, &a.out)?;
    let mode = match m.distortion.mode {
        DistortionMode::None => "none",
        DistortionMode::SmoothWarp => "smooth-warp",
    };
    println!("{} frames, distortion {mode} -> {}", m.frames.len(), a.out.display());
    Ok(())
}

pub fn match_edges(cfg: &PipelineConfig, a: MatchArgs) -> Result<()> {
    let layout = DatasetLayout::new(&a.data);
    let plan = layout.read_plan()?;
    let extra = a.extra_edges.unwrap_or(cfg.matching.extra_edges);
    let graph = matching::build_match_graph(&plan, extra)?;
    let obs = graph
        .edges
        .iter()
        .map(|e| layout.read_pair(e.ref_frame, e.src_frame))
        .collect::<liftcore::Result<Vec<_>>>()?;
    let rel = matching::match_pairs(&obs)?;
    let out = MatchFile {
        extra_edges: extra,
        edges: graph
            .edges
            .iter()
            .zip(&rel)
            .map(|(e, r)| RelativePoseRecord::new(e.ref_frame, e.src_frame, r))
            .collect(),
    };
    io::write_json(&a.out, &out)?;
    let worst = rel.iter().map(|r| r.residual).fold(0.0, f64::max);
    println!("{} edges, max residual {worst:.3e} -> {}", rel.len(), a.out.display());
    Ok(())
}

pub fn register(cfg: &PipelineConfig, a: RegisterArgs) -> Result<()> {
    let layout = DatasetLayout::new(&a.data);
    let plan = layout.read_plan()?;
    let m: MatchFile = io::read_json(&a.relative)?;
    let graph = matching::build_match_graph(&plan, m.extra_edges)?;
    if graph.edges.len() != m.edges.len()
        || graph
            .edges
            .iter()
            .zip(&m.edges)
            .any(|(e, r)| (e.ref_frame, e.src_frame) != (r.ref_frame_id, r.src_frame_id))
    {
        bail!("{} does not match the plan's match graph", a.relative.display());
    }
    let relative: Vec<_> = m.edges.iter().map(RelativePoseRecord::relative).collect();
    let observations = if graph.has_extra_edges() {
        graph
            .edges
            .iter()
            .map(|e| layout.read_pair(e.ref_frame, e.src_frame))
            .collect::<liftcore::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let frames = trajectory::acquire_frames(&plan, &DiskFrameProvider { layout: layout.clone() })?;
    let views = frames
        .into_iter()
        .map(|f| {
            Ok(FrameView {
                frame_id: f.frame_id,
                pointmap: layout.read_pointmap(f.frame_id)?,
                image: Some(f.image),
            })
        })
        .collect::<liftcore::Result<Vec<_>>>()?;

    let root = &views[INPUT_FRAME].pointmap;
    let intrinsics = match a.focal.or(cfg.matching.focal) {
        Some(f) => Intrinsics::new(f, root.width, root.height)?,
        None => matching::estimate_focal(root)?,
    };
    let input = RegistrationInput {
        graph: &graph,
        relative: &relative,
        observations: &observations,
        views: &views,
        intrinsics,
    };
    let scene = matching::register(&input, &cfg.matching.register_options())?;

    let mut poses = PoseFile::new(&intrinsics, scene.poses.iter().copied().enumerate());
    poses.scales = scene.scales.iter().copied().enumerate().collect();
    io::write_json(&a.out.join("poses.json"), &poses)?;
    io::write_points(&a.out.join("points.ply"), &scene.points)?;
    println!(
        "{} frames, focal {:.3}, {} points -> {}",
        scene.poses.len(),
        intrinsics.focal,
        scene.points.len(),
        a.out.display()
    );
    Ok(())
}

fn depth_path(dir: &Path, id: usize) -> std::path::PathBuf {
    dir.join("depth").join(format!("{id}.pfm"))
}

pub fn calibrate(_cfg: &PipelineConfig, a: CalibrateArgs) -> Result<()> {
    let layout = DatasetLayout::new(&a.data);
    let poses: PoseFile = io::read_json(&a.poses)?;
    let mut frames = BTreeMap::new();
    for &id in poses.poses.keys() {
        let scale = poses.scales.get(&id).copied().unwrap_or(1.0);
        let absolute = layout.read_pointmap(id)?.depth(scale);
        let relative = layout.read_depth_rel(id)?;
        let (res, calibrated) = depthcal::calibrate(&absolute, &relative, None).with_context(|| format!("frame {id}"))?;
        io::write_pfm(&depth_path(&a.out, id), &io::depth_to_pfm(&calibrated))?;
        frames.insert(id, res);
    }
    io::write_json(&a.out.join("calibration.json"), &CalibrationFile { frames })?;
    println!("{} depth maps -> {}", poses.poses.len(), a.out.display());
    Ok(())
}

/// Streams step records as JSON lines and writes periodic snapshots.
struct DiskObserver {
    log: BufWriter<File>,
    dir: std::path::PathBuf,
    error: Option<anyhow::Error>,
}

impl DiskObserver {
    fn keep(&mut self, r: Result<()>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }
}

impl TrainObserver for DiskObserver {
    fn on_step(&mut self, record: &StepRecord) {
        let r = serde_json::to_string(record)
            .map_err(anyhow::Error::from)
            .and_then(|line| Ok(writeln!(self.log, "{line}")?));
        self.keep(r);
    }

    fn on_checkpoint(&mut self, iteration: usize, gaussians: &GaussianCloud, field: Option<&DistortionField>) {
        let dir = self.dir.join("checkpoints").join(iteration.to_string());
        let r = (|| -> Result<()> {
            io::write_gaussians(&dir.join("gaussians.ply"), gaussians)?;
            if let Some(f) = field {
                io::write_field(&dir.join("field.bin"), f)?;
            }
            Ok(())
        })();
        self.keep(r);
    }
}

pub fn train(cfg: &PipelineConfig, a: TrainArgs) -> Result<()> {
    let layout = DatasetLayout::new(&a.data);
    let plan = layout.read_plan()?;
    let poses: PoseFile = io::read_json(&a.poses)?;
    let intrinsics = poses.intrinsics()?;
    let registered = poses.dense()?;
    let frames = trajectory::acquire_frames(&plan, &DiskFrameProvider { layout })?;

    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    tc.vanilla_iters = a.vanilla_iters.unwrap_or(tc.vanilla_iters);
    tc.field_iters = a.field_iters.unwrap_or(tc.field_iters);
    tc.max_points = a.max_points.unwrap_or(tc.max_points);

    let views = frames
        .into_iter()
        .map(|f| {
            let pose = *registered
                .get(f.frame_id)
                .ok_or_else(|| anyhow!("frame {} has no registered pose", f.frame_id))?;
            let depth = match &a.depth {
                Some(dir) => {
                    let pfm = io::read_pfm(&depth_path(dir, f.frame_id))?;
                    Some(io::depth_from_pfm(&pfm, DepthKind::Absolute)?)
                }
                None => None,
            };
            Ok(TrainView {
                frame_id: f.frame_id,
                image: f.image,
                pose,
                stamp: f.stamp,
                depth,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let points = io::read_points(&a.points)?;
    let cloud = train::init_gaussians(&points, tc.max_points)?;
    std::fs::create_dir_all(&a.out)?;
    let mut obs = DiskObserver {
        log: BufWriter::new(File::create(a.out.join("metrics.jsonl"))?),
        dir: a.out.clone(),
        error: None,
    };
    let model = train::train_views(cloud, views, intrinsics, &tc, &mut obs)?;
    obs.log.flush()?;
    if let Some(e) = obs.error {
        return Err(e.context("writing training outputs"));
    }
    io::write_gaussians(&a.out.join("gaussians.ply"), &model.gaussians)?;
    if let Some(f) = &model.field {
        io::write_field(&a.out.join("field.bin"), f)?;
    }
    let last = model.history.last();
    println!(
        "{} iterations, {} gaussians, final loss {:.4} -> {}",
        model.history.len(),
        model.gaussians.len(),
        last.map_or(f64::NAN, |r| r.total),
        a.out.display()
    );
    Ok(())
}

pub fn render(cfg: &PipelineConfig, a: RenderArgs) -> Result<()> {
    let mut g = match &a.gaussians {
        Some(p) => io::read_gaussians(p)?,
        None => GaussianCloud::new(),
    };
    if let Some(p) = &a.field {
        let field = io::read_field(p)?;
        let st = a.stamp.unwrap_or([0.0, 0.0]);
        g = field.deform(&g, FrameStamp::new(st[0], st[1])).0;
    }
    let poses: Option<PoseFile> = a.poses.as_deref().map(io::read_json).transpose()?;
    let k = {
        let base = poses.as_ref().map(|p| (p.focal, p.width, p.height));
        let width = a.width.or(base.map(|b| b.1)).ok_or_else(|| anyhow!("--width or --poses required"))?;
        let height = a.height.or(base.map(|b| b.2)).unwrap_or(width);
        let focal = a.focal.or(base.map(|b| b.0)).unwrap_or(0.9 * width.max(height) as f64);
        Intrinsics::new(focal, width, height)?
    };
    let background = match &a.background {
        Some(b) => Vec3::new(b[0], b[1], b[2]),
        None => Vec3::from(cfg.train.background),
    };
    let settings = RenderSettings {
        background,
        ..RenderSettings::default()
    };
    let lookup = |id: usize| -> Result<Pose> {
        poses
            .as_ref()
            .ok_or_else(|| anyhow!("--pose {id} needs --poses"))?
            .pose(id)
            .ok_or_else(|| anyhow!("frame {id} not in the pose file"))
    };
    let targets: Vec<(std::path::PathBuf, Pose)> = match a.pose.as_str() {
        "identity" => vec![(a.out.clone(), Pose::identity())],
        "all" => {
            let p = poses.as_ref().ok_or_else(|| anyhow!("--pose all needs --poses"))?;
            p.poses
                .iter()
                .map(|(id, m)| (a.out.join(format!("{id}.png")), Pose::from_row_major(m)))
                .collect()
        }
        s => {
            let id: usize = s
                .parse()
                .map_err(|_| anyhow!("--pose must be identity, all or a frame id, got {s:?}"))?;
            vec![(a.out.clone(), lookup(id)?)]
        }
    };
    for (path, pose) in &targets {
        let img = splat::render(&g, pose, &k, &settings).image();
        io::write_png(path, &img)?;
    }
    println!("{} image(s) -> {}", targets.len(), a.out.display());
    Ok(())
}

/// Similarity taking ground-truth world coordinates into the registered frame,
/// fitted on camera centers; anchored at the input frame if that is degenerate.
fn gt_to_registered(gt: &[Pose], reg: &[Pose]) -> Similarity {
    let src: Vec<Vec3> = gt.iter().map(|p| p.translation).collect();
    let dst: Vec<Vec3> = reg.iter().map(|p| p.translation).collect();
    let w = vec![1.0; src.len()];
    if let Ok((s, _)) = matching::weighted_similarity(&src, &dst, &w) {
        return s;
    }
    let anchor = reg[INPUT_FRAME].compose(&gt[INPUT_FRAME].inverse());
    Similarity {
        scale: 1.0,
        rotation: anchor.rotation,
        translation: anchor.translation,
    }
}

pub fn eval(cfg: &PipelineConfig, a: EvalArgs) -> Result<()> {
    let layout = DatasetLayout::new(&a.data);
    let manifest: Manifest = io::read_json(&layout.manifest())?;
    let g = io::read_gaussians(&a.gaussians)?;
    let registered: PoseFile = io::read_json(&a.poses)?;
    let gt: PoseFile = io::read_json(&layout.poses_gt())?;
    let (gt, reg) = (gt.dense()?, registered.dense()?);
    if gt.len() != reg.len() {
        bail!("{} registered poses for {} ground-truth poses", reg.len(), gt.len());
    }
    let align = gt_to_registered(&gt, &reg);
    let k = registered.intrinsics()?;
    let extent = g
        .bounds()
        .map(|(lo, hi)| (hi - lo).norm())
        .filter(|d| *d > 0.0)
        .unwrap_or(1.0);
    let mut opts = cfg.eval.options(extent, cfg.train.background);
    opts.steps = a.steps.unwrap_or(opts.steps);

    let mut views = Vec::new();
    for v in &manifest.eval_views {
        let image = io::read_png(&a.data.join(Manifest::eval_path(&v.name)))?;
        let p = Pose::from_row_major(&v.pose);
        let init = Pose::new(align.rotation * p.rotation, align.apply(&p.translation));
        let r = train::eval_test_view(&g, &image, &init, &k, &opts)?;
        views.push(ViewMetrics {
            name: v.name.clone(),
            psnr: r.psnr,
            ssim: r.ssim,
            pose_steps: r.steps,
            diverged: r.diverged,
        });
    }
    if views.is_empty() {
        bail!("dataset has no held-out views");
    }
    let n = views.len() as f64;
    let report = EvalReport {
        mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        views,
    };
    io::write_json(&a.out, &report)?;
    println!("{} views, mean psnr {:.2} ssim {:.4} -> {}", report.views.len(), report.mean_psnr, report.mean_ssim, a.out.display());
    Ok(())
}
