//! Shared fixtures for the benchmarks.

use liftcore::matching::MergedPoint;
use liftcore::synth::{render_gt, SynthScene};
use liftcore::train::init_gaussians;
use liftcore::{GaussianCloud, Intrinsics, Pose};

/// A random synthetic scene, its ground-truth view from the origin and a
/// cloud initialized from that view's pointmap.
pub struct Fixture {
    pub scene: SynthScene,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub cloud: GaussianCloud,
    pub points: Vec<MergedPoint>,
}

pub fn fixture(resolution: usize, max_points: usize) -> Fixture {
    let scene = SynthScene::random(0);
    let intrinsics = Intrinsics::new(0.9 * resolution as f64, resolution, resolution).unwrap();
    let pose = Pose::identity();
    let view = render_gt(&scene, &pose, &intrinsics);
    let pm = &view.pointmap;
    let points: Vec<MergedPoint> = pm
        .points
        .iter()
        .zip(&pm.confidence)
        .enumerate()
        .filter(|(_, (_, c))| **c > 0.0)
        .map(|(i, (p, c))| MergedPoint {
            position: *p,
            color: view.image.pixel(i % pm.width, i / pm.width),
            confidence: *c,
            frame_id: 0,
        })
        .collect();
    let cloud = init_gaussians(&points, max_points).unwrap();
    Fixture {
        scene,
        intrinsics,
        pose,
        cloud,
        points,
    }
}
