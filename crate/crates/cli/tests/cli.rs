use std::path::Path;
use std::process::{Command, Output};

use liftcore::geom::rotation_angle;
use liftcore::io::{self, PoseFile};
use liftcore::trajectory::TrajectoryPlan;

fn liftcore(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liftcore"))
        .current_dir(dir)
        .env("LIFTCORE_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = liftcore(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("pipeline.toml");
    std::fs::write(&p, format!("schema_version = 1\n{body}")).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn plan_counts_frames() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["plan", "--l", "16", "--D", "4", "--out", "plan.json"]);
    let plan: TrajectoryPlan = io::read_json(&tmp.path().join("plan.json")).unwrap();
    assert_eq!(plan.frames.len(), 109);
    assert_eq!(plan.frames.iter().filter(|f| f.stamp.is_origin()).count(), 1);
}

#[test]
fn undistorted_synth_registers_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "data", "--l", "3", "--D", "4", "--resolution", "48", "--distortion", "none"]);
    ok(d, &["match", "--data", "data", "--out", "rel.json"]);
    ok(d, &["register", "--data", "data", "--relative", "rel.json", "--out", "reg"]);

    let gt: PoseFile = io::read_json(&d.join("data/poses_gt.json")).unwrap();
    let reg: PoseFile = io::read_json(&d.join("reg/poses.json")).unwrap();
    let (gt, reg_poses) = (gt.dense().unwrap(), reg.dense().unwrap());
    assert_eq!(gt.len(), reg_poses.len());
    // registered poses live in the input camera's frame
    let root = gt[0].inverse();
    for (g, r) in gt.iter().zip(&reg_poses) {
        let want = root.compose(g);
        assert!(rotation_angle(&(want.rotation.transpose() * r.rotation)) < 1e-6);
        assert!((want.translation - r.translation).norm() < 1e-6);
    }
    for s in reg.scales.values() {
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn empty_scene_renders_background() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &["render", "--pose", "identity", "--width", "16", "--height", "12", "--background", "0.2,0.4,1.0", "--out", "bg.png"],
    );
    let img = io::read_png(&tmp.path().join("bg.png")).unwrap();
    assert_eq!(img.size(), (16, 12));
    for px in img.data.chunks(3) {
        let want = [51.0 / 255.0, 102.0 / 255.0, 1.0];
        for (a, b) in px.iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn errors_are_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for args in [
        vec!["match", "--data", "missing"],
        vec!["plan", "--l", "1"],
        vec!["plan", "--bogus"],
        vec!["render", "--pose", "3", "--width", "8", "--out", "x.png"],
    ] {
        let out = liftcore(d, &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error["), "{err}");
    }
}

#[test]
fn config_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bad = write_config(d, "[plan]\nl = 3\nfps = 30\n");
    let out = liftcore(d, &["--config", &bad, "plan"]);
    assert_eq!(out.status.code(), Some(1));

    let good = write_config(d, "[plan]\nl = 3\ndirections = 2\n");
    ok(d, &["--config", &good, "plan", "--out", "p.json"]);
    let plan: TrajectoryPlan = io::read_json(&d.join("p.json")).unwrap();
    assert_eq!(plan.frames.len(), 3 * 2 + 2);

    std::fs::write(d.join("nover.toml"), "[plan]\nl = 3\n").unwrap();
    let out = liftcore(d, &["--config", "nover.toml", "plan"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));
}

#[test]
fn full_pipeline_produces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_config(
        d,
        "[plan]\nl = 2\ntranslation = 0.2\n[synth]\nresolution = 32\neval_views = 2\n\
         [train]\nvanilla_iters = 20\nfield_iters = 20\ncheckpoint_interval = 20\nmax_points = 800\n\
         [train.field]\nhidden = 4\nresolution = 8\nmlp_width = 8\n[eval]\nsteps = 5\n",
    );
    let c = cfg.as_str();
    ok(d, &["--config", c, "plan", "--out", "plan.json"]);
    ok(d, &["--config", c, "--seed", "3", "synth", "--plan", "plan.json", "--out", "data"]);
    ok(d, &["--config", c, "match", "--data", "data", "--out", "rel.json"]);
    ok(d, &["--config", c, "register", "--data", "data", "--relative", "rel.json", "--out", "reg"]);
    ok(d, &["--config", c, "calibrate", "--data", "data", "--poses", "reg/poses.json", "--out", "cal"]);
    ok(
        d,
        &[
            "--config", c, "--seed", "3", "train", "--data", "data", "--poses", "reg/poses.json", "--points",
            "reg/points.ply", "--depth", "cal", "--out", "model",
        ],
    );
    ok(
        d,
        &["--config", c, "render", "--gaussians", "model/gaussians.ply", "--poses", "reg/poses.json", "--pose", "all", "--out", "renders"],
    );
    ok(
        d,
        &[
            "--config", c, "render", "--gaussians", "model/gaussians.ply", "--field", "model/field.bin", "--stamp", "0.5,0",
            "--poses", "reg/poses.json", "--pose", "1", "--out", "warped.png",
        ],
    );
    ok(
        d,
        &["--config", c, "eval", "--data", "data", "--gaussians", "model/gaussians.ply", "--poses", "reg/poses.json", "--out", "eval.json"],
    );

    let plan: TrajectoryPlan = io::read_json(&d.join("plan.json")).unwrap();
    let n = plan.frames.len();
    for path in [
        "data/manifest.json",
        "data/poses_gt.json",
        "reg/points.ply",
        "cal/calibration.json",
        "model/gaussians.ply",
        "model/field.bin",
        "model/checkpoints/20/gaussians.ply",
        "model/checkpoints/40/field.bin",
        "warped.png",
    ] {
        assert!(d.join(path).is_file(), "{path} missing");
    }
    for id in 0..n {
        assert!(d.join(format!("cal/depth/{id}.pfm")).is_file());
        assert!(d.join(format!("renders/{id}.png")).is_file());
    }
    let log = std::fs::read_to_string(d.join("model/metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 40);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"]["total"].as_f64().unwrap().is_finite());
    }
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["views"].as_array().unwrap().len(), 2);
    assert!(eval["mean_psnr"].as_f64().unwrap() > 10.0);
}
