//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `LIFTCORE_ACCEPTANCE=1,5` runs a subset.

use std::io::BufReader;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use liftcore::depthcal::calibrate;
use liftcore::field::{normalization_box, Deformation, DistortionField, FieldConfig};
use liftcore::geom::{exp_so3, rotation_angle, Vec3};
use liftcore::io::{self, Pfm, PoseFile, RelativePoseRecord};
use liftcore::matching::{estimate_focal, relative_pose, MergedPoint, RelativePose};
use liftcore::rng::{seeded, Rng};
use liftcore::splat::{render, render_backward, render_with_state, RenderGrad, RenderSettings};
use liftcore::synth::{eval_poses, pair_observation, render_gt, render_plan, DistortionSpec, SynthScene};
use liftcore::train::{init_gaussians, psnr, NoObserver, TrainConfig, TrainView, Trainer};
use liftcore::trajectory::{frame_count, plan_articulated, Step};
use liftcore::{CloudGrad, DepthKind, DepthMap, FrameStamp, GaussianCloud, Intrinsics, PointMap, Pose};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_pose(rng: &mut Rng, rot: f64, trans: f64) -> Pose {
    let w = Vec3::from_fn(|_, _| rng.random_range(-rot..rot));
    let t = Vec3::from_fn(|_, _| rng.random_range(-trans..trans));
    Pose::new(exp_so3(&w), t)
}

fn bbox_diag(points: &[Vec3], conf: &[f64]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for (p, c) in points.iter().zip(conf) {
        if *c > 0.0 {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
    }
    (hi - lo).norm()
}

/// Isotropic Gaussian jitter with σ = `frac` of the valid points' bounding-box diagonal.
fn jitter(pm: &mut PointMap, frac: f64, rng: &mut Rng) {
    let sigma = frac * bbox_diag(&pm.points, &pm.confidence);
    let n = Normal::new(0.0, sigma).unwrap();
    for (p, c) in pm.points.iter_mut().zip(&pm.confidence) {
        if *c > 0.0 {
            *p += Vec3::from_fn(|_, _| n.sample(rng));
        }
    }
}

/// 1. Relative pose recovery from pointmap pairs.
fn pose_recovery() -> Outcome {
    let k = Intrinsics::new(56.0, 64, 64).unwrap();
    let mut rng = seeded(101);
    let (mut rot, mut trans, mut scale, mut noisy_rot) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut slowest = Duration::ZERO;
    for trial in 0..10 {
        let scene = SynthScene::random(trial);
        let ref_pose = random_pose(&mut rng, 0.1, 0.3);
        let src_pose = random_pose(&mut rng, 0.1, 0.3);
        let view = render_gt(&scene, &src_pose, &k);
        // the source pointmap is in its own arbitrary unit
        let s = rng.random_range(0.5..2.0);
        let mut obs = pair_observation(0, &ref_pose, 1, &src_pose, &view.pointmap);
        for p in &mut obs.src_in_src.points {
            *p *= s;
        }
        let truth = ref_pose.inverse().compose(&src_pose);
        let extent = bbox_diag(&obs.src_in_ref.points, &obs.src_in_ref.confidence);

        let t0 = Instant::now();
        let r = relative_pose(&obs).expect("noiseless pair aligns").similarity();
        slowest = slowest.max(t0.elapsed());
        rot = rot.max(rotation_angle(&(truth.rotation.transpose() * r.rotation)));
        trans = trans.max((r.translation - truth.translation).norm() / extent);
        scale = scale.max((r.scale * s - 1.0).abs());

        jitter(&mut obs.src_in_src, 0.01, &mut rng);
        jitter(&mut obs.src_in_ref, 0.01, &mut rng);
        let t0 = Instant::now();
        let r = relative_pose(&obs).expect("noisy pair aligns").similarity();
        slowest = slowest.max(t0.elapsed());
        noisy_rot = noisy_rot.max(rotation_angle(&(truth.rotation.transpose() * r.rotation)));
    }
    let pass = rot < 1e-6 && trans < 1e-8 && scale < 1e-8 && noisy_rot < 0.5f64.to_radians() && slowest < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "rot {rot:.1e} rad, trans {trans:.1e}×extent, scale {scale:.1e}, 1% noise rot {:.3}°, slowest pair {slowest:.1?}",
            noisy_rot.to_degrees()
        ),
    )
}

/// 2. Focal estimation on synthetic pointmaps.
fn focal_recovery() -> Outcome {
    let mut rng = seeded(202);
    let (mut clean, mut noisy) = (0.0f64, 0.0f64);
    for (i, f) in [200.0, 350.0, 800.0].into_iter().enumerate() {
        let k = Intrinsics::new(f, 64, 64).unwrap();
        let scene = SynthScene::random(20 + i as u64);
        let mut pm = render_gt(&scene, &Pose::identity(), &k).pointmap;
        let est = estimate_focal(&pm).expect("focal from clean pointmap").focal;
        clean = clean.max((est / f - 1.0).abs());
        jitter(&mut pm, 0.01, &mut rng);
        let est = estimate_focal(&pm).expect("focal from noisy pointmap").focal;
        noisy = noisy.max((est / f - 1.0).abs());
    }
    outcome(
        clean < 1e-3 && noisy < 0.02,
        format!("noiseless {:.4}% (limit 0.1%), 1% noise {:.3}% (limit 2%)", clean * 100.0, noisy * 100.0),
    )
}

/// 3. Depth calibration: exact affine relations and gross outliers.
fn depth_calibration() -> Outcome {
    let mut worst_exact = 0.0f64;
    let k = Intrinsics::new(58.0, 64, 64).unwrap();
    let mut rng = seeded(303);
    for seed in 0..5 {
        let abs = render_gt(&SynthScene::random(seed), &Pose::identity(), &k).depth;
        let (a, b) = (rng.random_range(0.2..5.0), rng.random_range(-3.0..3.0));
        let rel_data = abs.data.iter().map(|d| a * d + b).collect();
        let rel = DepthMap::with_mask(abs.width, abs.height, rel_data, abs.valid.clone(), DepthKind::Relative).unwrap();
        let (res, out) = calibrate(&abs, &rel, None).expect("calibration");
        let scale_err = (res.scale * a - 1.0).abs();
        let shift_err = (res.shift + b / a).abs();
        let map_err = out
            .data
            .iter()
            .zip(&abs.data)
            .zip(&abs.valid)
            .filter(|(_, v)| **v)
            .map(|((x, y), _)| (x - y).abs() / y)
            .fold(0.0, f64::max);
        worst_exact = worst_exact.max(scale_err).max(shift_err).max(map_err);
    }

    // two-sided multiplicative gross errors on 10% of the pixels
    let (mut worst_scale, mut worst_shift) = (0.0f64, 0.0f64);
    for seed in 0..3 {
        let mut rng = seeded(310 + seed);
        let n = 256 * 256;
        let rel: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
        let (s, t) = (rng.random_range(0.5..3.0), rng.random_range(1.0..4.0));
        let mut abs: Vec<f64> = rel.iter().map(|r| s * r + t).collect();
        for k in (0..n).step_by(10) {
            let factor = rng.random_range(3.0..20.0);
            abs[k] = if rng.random_bool(0.5) { abs[k] * factor } else { abs[k] / factor };
        }
        let abs = DepthMap::new(256, 256, abs, DepthKind::Absolute).unwrap();
        let rel = DepthMap::new(256, 256, rel, DepthKind::Relative).unwrap();
        let (res, _) = calibrate(&abs, &rel, None).expect("calibration");
        worst_scale = worst_scale.max((res.scale / s - 1.0).abs());
        worst_shift = worst_shift.max((res.shift / t - 1.0).abs());
    }
    outcome(
        worst_exact < 1e-12 && worst_scale < 0.01 && worst_shift < 0.01,
        format!(
            "exact max rel err {worst_exact:.1e}; 10% outliers: scale {:.3}%, shift {:.3}%",
            worst_scale * 100.0,
            worst_shift * 100.0
        ),
    )
}

fn fd_close(analytic: f64, fd: f64) -> bool {
    let d = (analytic - fd).abs();
    d <= 1e-3 * analytic.abs().max(fd.abs()) || d <= 1e-8
}

fn random_cloud(n: usize, rng: &mut Rng) -> GaussianCloud {
    let mut g = GaussianCloud::new();
    for _ in 0..n {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let z = rng.random_range(2.0..4.0);
        g.push(
            Vec3::new(rng.random_range(-0.4..0.4) * z, rng.random_range(-0.4..0.4) * z, z),
            Vec3::from_fn(|_, _| rng.random_range(0.08..0.3)),
            q.map(|v| v / norm),
            rng.random_range(0.2..0.8),
            Vec3::from_fn(|_, _| rng.random_range(0.0..1.0)),
        );
    }
    g
}

/// Mutable access to the `k`-th scalar parameter of a cloud (14 per Gaussian).
fn cloud_param(g: &mut GaussianCloud, k: usize) -> &mut f64 {
    let (i, a) = (k / 14, k % 14);
    match a {
        0..3 => &mut g.centers[i][a],
        3..6 => &mut g.log_scales[i][a - 3],
        6..10 => &mut g.rotations[i][a - 6],
        10 => &mut g.opacity_logits[i],
        _ => &mut g.sh_dc[i][a - 11],
    }
}

fn cloud_grad(g: &CloudGrad, k: usize) -> f64 {
    let (i, a) = (k / 14, k % 14);
    match a {
        0..3 => g.centers[i][a],
        3..6 => g.log_scales[i][a - 3],
        6..10 => g.rotations[i][a - 6],
        10 => g.opacity_logits[i],
        _ => g.sh_dc[i][a - 11],
    }
}

/// 4. Finite-difference checks of the renderer and the field.
fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seeded(404);
    let eps = 1e-6;

    // renderer: a random linear functional of color, depth and alpha
    let k = Intrinsics::new(14.0, 16, 16).unwrap();
    let settings = RenderSettings {
        background: Vec3::new(0.1, 0.5, 0.2),
        tile_size: 16,
    };
    let (mut splat_good, mut splat_total) = (0, 0);
    for _ in 0..10 {
        let g = random_cloud(6, &mut rng);
        let pose = random_pose(&mut rng, 0.05, 0.1);
        let n = 16 * 16;
        let up = RenderGrad {
            color: (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            depth: (0..n).map(|_| rng.random_range(-0.3..0.3)).collect(),
            alpha: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let scalar = |g: &GaussianCloud| {
            let out = render(g, &pose, &k, &settings);
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            dot(&out.color, &up.color) + dot(&out.depth, &up.depth) + dot(&out.alpha, &up.alpha)
        };
        let (_, state) = render_with_state(&g, &pose, &k, &settings);
        let grad = render_backward(&state, &g, &pose, &up).expect("backward");
        for _ in 0..50 {
            let p = rng.random_range(0..14 * g.len());
            let (mut gp, mut gm) = (g.clone(), g.clone());
            *cloud_param(&mut gp, p) += eps;
            *cloud_param(&mut gm, p) -= eps;
            let fd = (scalar(&gp) - scalar(&gm)) / (2.0 * eps);
            splat_total += 1;
            splat_good += fd_close(cloud_grad(&grad.cloud, p), fd) as usize;
        }
    }

    // field: a random linear functional of the deformed cloud and the offsets
    let cfg = FieldConfig {
        hidden: 4,
        resolution: 4,
        levels: vec![1, 2],
        mlp_width: 8,
        ..FieldConfig::default()
    };
    let (mut field_good, mut field_total) = (0, 0);
    for round in 0..2 {
        let mut f = DistortionField::new(cfg.clone(), (Vec3::repeat(-1.0), Vec3::repeat(1.0)), &mut rng).unwrap();
        let planes = f.plane_param_count();
        for (i, v) in f.params.iter_mut().enumerate() {
            *v = if i < planes { 1.0 + rng.random_range(-0.5..0.5) } else { rng.random_range(-0.6..0.6) };
        }
        let mut g = GaussianCloud::new();
        for _ in 0..32 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.push(
                Vec3::from_fn(|_, _| rng.random_range(-0.9..0.9)),
                Vec3::from_fn(|_, _| rng.random_range(0.05..0.3)),
                q.map(|v| v / norm),
                0.5,
                Vec3::repeat(0.5),
            );
        }
        let stamp = FrameStamp::new(0.35 - 0.5 * round as f64, -0.55);
        let mut w = CloudGrad::zeros(g.len());
        let mut wd = Deformation::zeros(g.len());
        for i in 0..g.len() {
            w.centers[i] = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            w.log_scales[i] = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            w.rotations[i] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            wd.dx[i] = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            wd.ds[i] = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            wd.dr[i] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        }
        let scalar = |f: &DistortionField, g: &GaussianCloud| {
            let (out, d) = f.deform(g, stamp);
            let mut total = 0.0;
            for i in 0..g.len() {
                total += out.centers[i].dot(&w.centers[i]) + out.log_scales[i].dot(&w.log_scales[i]);
                total += (0..4).map(|c| out.rotations[i][c] * w.rotations[i][c]).sum::<f64>();
                total += d.dx[i].dot(&wd.dx[i]) + d.ds[i].dot(&wd.ds[i]);
                total += (0..4).map(|c| d.dr[i][c] * wd.dr[i][c]).sum::<f64>();
            }
            total
        };
        let (_, d) = f.deform(&g, stamp);
        let (cg, pg) = f.backward(&g, stamp, &d, &w, Some(&wd));
        for _ in 0..200 {
            let p = rng.random_range(0..f.param_count());
            let (mut fp, mut fm) = (f.clone(), f.clone());
            fp.params[p] += eps;
            fm.params[p] -= eps;
            field_total += 1;
            field_good += fd_close(pg[p], (scalar(&fp, &g) - scalar(&fm, &g)) / (2.0 * eps)) as usize;
        }
        // centers, scales and rotations of the canonical cloud
        for _ in 0..50 {
            let p = 14 * rng.random_range(0..g.len()) + rng.random_range(0..10);
            let (mut gp, mut gm) = (g.clone(), g.clone());
            *cloud_param(&mut gp, p) += eps;
            *cloud_param(&mut gm, p) -= eps;
            field_total += 1;
            field_good += fd_close(cloud_grad(&cg, p), (scalar(&f, &gp) - scalar(&f, &gm)) / (2.0 * eps)) as usize;
        }
    }
    let good = splat_good + field_good;
    let total = splat_total + field_total;
    let elapsed = t0.elapsed();
    outcome(
        good as f64 >= 0.95 * total as f64 && total >= 1000 && elapsed < Duration::from_secs(120),
        format!(
            "{good}/{total} within 1e-3 (renderer {splat_good}/{splat_total}, field {field_good}/{field_total}) in {elapsed:.1?}"
        ),
    )
}

/// 5. Planner frame counts and the unique input stamp.
fn frame_counts() -> Outcome {
    let mut bad = Vec::new();
    for l in 2..=16 {
        for d in [2, 4] {
            let plan = plan_articulated(l, d, Step::translation(0.1)).expect("plan");
            let want = l * d + (l - 1) * (d - 1);
            let origins = plan.frames.iter().filter(|f| f.stamp.is_origin()).count();
            if plan.frames.len() != want || frame_count(l, d) != want || origins != 1 {
                bad.push(format!("l={l} D={d}: {} frames, {origins} origin stamps", plan.frames.len()));
            }
        }
    }
    let detail = if bad.is_empty() {
        "all l in 2..=16, D in {2,4} give l·D + (l−1)(D−1) frames with one (0,0) stamp".to_string()
    } else {
        bad.join("; ")
    };
    outcome(bad.is_empty(), detail)
}

const ABLATION_RES: usize = 128;

/// Mean PSNR on undistorted held-out views of the canonical cloud for
/// full, vanilla, no-L_distort and one-axis training on one scene.
fn ablation_scene(seed: u64) -> [f64; 4] {
    let k = Intrinsics::new(0.9 * ABLATION_RES as f64, ABLATION_RES, ABLATION_RES).unwrap();
    let scene = SynthScene::random(seed);
    let l = 2;
    let plan = plan_articulated(
        l,
        4,
        Step {
            translation: 0.5 / l as f64,
            rotation: 0.05 / l as f64,
        },
    )
    .unwrap();
    let gt = render_plan(&scene, &plan, &k).unwrap();
    let dist = DistortionSpec {
        amplitude: 0.03,
        ..DistortionSpec::default()
    };

    let mut points = Vec::new();
    let mut views = Vec::new();
    for f in &plan.frames {
        let (pose, view) = &gt[f.frame_id];
        let image = dist.apply(&view.image, f.stamp);
        let pm = &view.pointmap;
        for (i, (p, c)) in pm.points.iter().zip(&pm.confidence).enumerate() {
            if *c > 0.0 {
                points.push(MergedPoint {
                    position: pose.transform_point(p),
                    color: image.pixel(i % ABLATION_RES, i / ABLATION_RES),
                    confidence: 1.0,
                    frame_id: f.frame_id,
                });
            }
        }
        views.push(TrainView {
            frame_id: f.frame_id,
            image,
            pose: *pose,
            stamp: f.stamp,
            depth: Some(view.depth.clone()),
        });
    }
    let cloud = init_gaussians(&points, 5000).unwrap();
    let held_out: Vec<_> = eval_poses(&plan, 4).into_iter().map(|p| (p, render_gt(&scene, &p, &k).image)).collect();

    let mut base = TrainConfig {
        vanilla_iters: 300,
        field_iters: 1500,
        checkpoint_interval: 0,
        seed,
        ..TrainConfig::default()
    };
    base.weights.tv = 0.0;
    base.lr.field = 1e-2;
    base.field.hidden = 8;
    base.field.resolution = 16;
    base.field.mlp_width = 16;

    let mut vanilla = base.clone();
    vanilla.vanilla_iters += vanilla.field_iters;
    vanilla.field_iters = 0;
    let mut no_distort = base.clone();
    no_distort.weights.distort = 0.0;
    let mut one_axis = base.clone();
    one_axis.one_axis = true;

    [base, vanilla, no_distort, one_axis].map(|cfg| {
        let mut t = Trainer::new(cloud.clone(), views.clone(), k, cfg).unwrap();
        t.run(&mut NoObserver).unwrap();
        let g = t.into_model().gaussians;
        let settings = RenderSettings::default();
        held_out.iter().map(|(p, img)| psnr(&render(&g, p, &k, &settings).image(), img)).sum::<f64>() / held_out.len() as f64
    })
}

/// 6. Ablation direction on the synthetic benchmark.
fn ablation() -> Outcome {
    let per_seed: Vec<[f64; 4]> = (0..3).map(ablation_scene).collect();
    let mean = |v: usize| per_seed.iter().map(|s| s[v]).sum::<f64>() / per_seed.len() as f64;
    let [full, vanilla, no_distort, one_axis] = [0, 1, 2, 3].map(mean);
    let seeds: Vec<String> = per_seed
        .iter()
        .map(|s| format!("[{:.2} {:.2} {:.2} {:.2}]", s[0], s[1], s[2], s[3]))
        .collect();
    let pass = full - vanilla >= 1.0 && no_distort < vanilla && full >= one_axis;
    outcome(
        pass,
        format!(
            "mean PSNR full {full:.2}, vanilla {vanilla:.2}, no L_distort {no_distort:.2}, one-axis {one_axis:.2}; \
             per seed [full vanilla no-distort one-axis] {}",
            seeds.join(" ")
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_liftcore"))
        .current_dir(dir)
        .env("LIFTCORE_THREADS", "1")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(dir: &Path) -> Result<Vec<u8>, String> {
    std::fs::write(
        dir.join("pipeline.toml"),
        "schema_version = 1\nseed = 7\n[plan]\nl = 2\ntranslation = 0.2\n[synth]\nresolution = 48\neval_views = 2\n\
         [train]\nvanilla_iters = 40\nfield_iters = 40\ncheckpoint_interval = 0\nmax_points = 2000\n\
         [train.field]\nhidden = 4\nresolution = 8\nmlp_width = 8\n[eval]\nsteps = 10\n",
    )
    .map_err(|e| e.to_string())?;
    let c = ["--config", "pipeline.toml"];
    let steps: [&[&str]; 7] = [
        &["synth", "--out", "data"],
        &["match", "--data", "data", "--out", "rel.json"],
        &["register", "--data", "data", "--relative", "rel.json", "--out", "reg"],
        &["calibrate", "--data", "data", "--poses", "reg/poses.json", "--out", "cal"],
        &["train", "--data", "data", "--poses", "reg/poses.json", "--points", "reg/points.ply", "--depth", "cal", "--out", "model"],
        &["eval", "--data", "data", "--gaussians", "model/gaussians.ply", "--poses", "reg/poses.json", "--out", "eval.json"],
        &["render", "--gaussians", "model/gaussians.ply", "--poses", "reg/poses.json", "--pose", "all", "--out", "renders"],
    ];
    for s in steps {
        let args: Vec<&str> = c.iter().chain(s.iter()).copied().collect();
        run_cli(dir, &args)?;
    }
    std::fs::read(dir.join("model/gaussians.ply")).map_err(|e| e.to_string())
}

/// 7. Bit-identical outputs across two single-threaded runs.
fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => outcome(
            x == y,
            format!("gaussians.ply {} bytes, identical: {}", x.len(), x == y),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("pipeline failed: {e}")),
    }
}

fn f32v(rng: &mut Rng, r: f32) -> f64 {
    rng.random_range(-r..r) as f64
}

/// 8. read∘write identity for every file format.
fn round_trips() -> Outcome {
    let mut rng = seeded(808);
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok && !failures.contains(&name.to_string()) {
            failures.push(name.to_string());
        }
    };
    for i in 0..100 {
        // PFM, with NaN holes
        let channels = if i % 2 == 0 { 1 } else { 3 };
        let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
        let mut data: Vec<f32> = (0..w * h * channels).map(|_| rng.random_range(-1e4f32..1e4)).collect();
        if i % 3 == 0 {
            let at = rng.random_range(0..data.len());
            data[at] = f32::NAN;
        }
        let pfm = Pfm::new(w, h, channels, data).unwrap();
        let mut buf = Vec::new();
        io::write_pfm_to(&mut buf, &pfm).unwrap();
        let back = io::read_pfm_from(&mut BufReader::new(&buf[..]));
        check("pfm", back.is_ok_and(|b| b.bit_eq(&pfm)));

        // Gaussian PLY, f32-valued
        let mut g = GaussianCloud::new();
        for _ in 0..rng.random_range(0..30) {
            g.centers.push(Vec3::from_fn(|_, _| f32v(&mut rng, 50.0)));
            g.log_scales.push(Vec3::from_fn(|_, _| f32v(&mut rng, 5.0)));
            g.rotations.push(std::array::from_fn(|_| f32v(&mut rng, 1.0)));
            g.opacity_logits.push(f32v(&mut rng, 8.0));
            g.sh_dc.push(Vec3::from_fn(|_, _| f32v(&mut rng, 2.0)));
        }
        let mut buf = Vec::new();
        io::write_gaussians_to(&mut buf, &g).unwrap();
        check("gaussian ply", io::read_gaussians_from(&mut BufReader::new(&buf[..])).is_ok_and(|b| b == g));

        // point PLY
        let points: Vec<MergedPoint> = (0..rng.random_range(0..30))
            .map(|_| MergedPoint {
                position: Vec3::from_fn(|_, _| rng.random_range(-1e3..1e3)),
                color: std::array::from_fn(|_| rng.random_range(0..=255u8) as f32 / 255.0),
                confidence: rng.random_range(0.0f32..10.0) as f64,
                frame_id: rng.random_range(0..200),
            })
            .collect();
        let mut buf = Vec::new();
        io::write_points_to(&mut buf, &points).unwrap();
        check("point ply", io::read_points_from(&mut BufReader::new(&buf[..])).is_ok_and(|b| b == points));

        // pose JSON
        let k = Intrinsics::new(rng.random_range(10.0..1000.0), rng.random_range(1..512), rng.random_range(1..512)).unwrap();
        let n = rng.random_range(1..20);
        let mut pf = PoseFile::new(&k, (0..n).map(|id| (id, random_pose(&mut rng, 3.0, 10.0))));
        if i % 2 == 0 {
            pf.scales = (0..n).map(|id| (id, rng.random_range(0.1..10.0))).collect();
        }
        let text = serde_json::to_string(&pf).unwrap();
        check("pose json", serde_json::from_str::<PoseFile>(&text).is_ok_and(|b| b == pf));
        let rel = RelativePose {
            rotation: exp_so3(&Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0))),
            translation: Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
            scale: rng.random_range(0.1..10.0),
            residual: rng.random_range(0.0..1.0),
        };
        let rec = RelativePoseRecord::new(rng.random_range(0..50), rng.random_range(0..50), &rel);
        let text = serde_json::to_string(&rec).unwrap();
        check("relative pose json", serde_json::from_str::<RelativePoseRecord>(&text).is_ok_and(|b| b == rec));

        // field checkpoint
        let cfg = FieldConfig {
            hidden: rng.random_range(1..5),
            resolution: rng.random_range(2..6),
            levels: (1..=rng.random_range(1..3)).collect(),
            mlp_width: rng.random_range(1..9),
            additive_scale: rng.random_bool(0.5),
            init_noise: rng.random_range(0.0..0.1),
        };
        let lo = Vec3::from_fn(|_, _| rng.random_range(-5.0..0.0));
        let hi = lo + Vec3::from_fn(|_, _| rng.random_range(0.1..5.0));
        let mut f = DistortionField::new(cfg, normalization_box(lo, hi), &mut rng).unwrap();
        for v in &mut f.params {
            *v = rng.random_range(-3.0..3.0);
        }
        let mut buf = Vec::new();
        io::write_field_to(&mut buf, &f).unwrap();
        check("field checkpoint", io::read_field_from(&mut &buf[..]).is_ok_and(|b| b == f));
    }
    let detail = if failures.is_empty() {
        "100 randomized instances each of PFM, Gaussian PLY, point PLY, pose JSON, relative-pose JSON, field checkpoint".to_string()
    } else {
        format!("mismatch in {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("LIFTCORE_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    // `cargo test -- --list` and friends expect a harness; list nothing
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "pose recovery", pose_recovery),
        (2, "focal recovery", focal_recovery),
        (3, "depth calibration", depth_calibration),
        (4, "gradient correctness", gradients),
        (5, "frame counts and stamps", frame_counts),
        (6, "ablation direction", ablation),
        (7, "end-to-end determinism", determinism),
        (8, "format round trips", round_trips),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !result.pass as usize;
        println!(
            "{} criterion {id} ({name}): {} [{:.1?}]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            t0.elapsed()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
