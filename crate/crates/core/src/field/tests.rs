use super::*;
use crate::rng::seeded;

fn small_config() -> FieldConfig {
    FieldConfig {
        hidden: 4,
        resolution: 4,
        levels: vec![1, 2],
        mlp_width: 8,
        additive_scale: false,
        init_noise: 1e-2,
    }
}

fn unit_box() -> (Vec3, Vec3) {
    (Vec3::repeat(-1.0), Vec3::repeat(1.0))
}

/// Every parameter random, so no head is silent.
fn random_field(cfg: FieldConfig, seed: u64) -> DistortionField {
    let mut rng = seeded(seed);
    let mut f = DistortionField::new(cfg, unit_box(), &mut rng).unwrap();
    let planes = f.plane_param_count();
    for (k, v) in f.params.iter_mut().enumerate() {
        *v = if k < planes { 1.0 + rng.random_range(-0.5..0.5) } else { rng.random_range(-0.6..0.6) };
    }
    f
}

fn random_cloud(n: usize, seed: u64) -> GaussianCloud {
    let mut rng = seeded(seed);
    let mut g = GaussianCloud::new();
    for _ in 0..n {
        let q: Quat = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        g.push(
            Vec3::from_fn(|_, _| rng.random_range(-0.9..0.9)),
            Vec3::from_fn(|_, _| rng.random_range(0.05..0.3)),
            q.map(|v| v / norm),
            rng.random_range(0.1..0.9),
            Vec3::from_fn(|_, _| rng.random_range(0.0..1.0)),
        );
    }
    g
}

/// Direct four-vertex bilinear interpolation of one channel.
fn oracle_sample(f: &DistortionField, plane: usize, a: f64, b: f64, c: usize) -> f64 {
    let p = f.planes()[plane];
    let n = p.resolution;
    let feats = f.plane_features(plane);
    let h = f.config.hidden;
    let x = (a + 1.0) / 2.0 * (n - 1) as f64;
    let y = (b + 1.0) / 2.0 * (n - 1) as f64;
    let (i, j) = ((x.floor() as usize).min(n - 2), (y.floor() as usize).min(n - 2));
    let (tx, ty) = (x - i as f64, y - j as f64);
    let v = |ii: usize, jj: usize| feats[(jj * n + ii) * h + c];
    v(i, j) * (1.0 - tx) * (1.0 - ty) + v(i + 1, j) * tx * (1.0 - ty) + v(i, j + 1) * (1.0 - tx) * ty + v(i + 1, j + 1) * tx * ty
}

fn coords(p: &Vec3, s: FrameStamp) -> [f64; 5] {
    [p.x, p.y, p.z, s.ti, s.tj]
}

#[test]
fn vertex_query_is_product_of_vertex_features() {
    let f = random_field(FieldConfig { levels: vec![1], ..small_config() }, 1);
    // resolution 4 puts vertices at -1, -1/3, 1/3, 1
    let p = Vec3::new(-1.0 / 3.0, 1.0 / 3.0, 1.0);
    let s = FrameStamp::new(-1.0, 1.0 / 3.0);
    let feat = &f.encode(&[p], s)[0];
    let q = coords(&p, s);
    let h = f.config.hidden;
    for c in 0..h {
        let mut expected = 1.0;
        for (k, pl) in f.planes().iter().enumerate() {
            let n = pl.resolution;
            let idx = |v: f64| ((v + 1.0) / 2.0 * (n - 1) as f64).round() as usize;
            let (i, j) = (idx(q[pl.axes.0]), idx(q[pl.axes.1]));
            expected *= f.plane_features(k)[(j * n + i) * h + c];
        }
        assert!((feat[c] - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }
}

#[test]
fn constant_one_planes_give_ones() {
    let mut f = random_field(small_config(), 2);
    let np = f.plane_param_count();
    f.params[..np].fill(1.0);
    let mut rng = seeded(3);
    for _ in 0..20 {
        let p = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let feat = &f.encode(&[p], FrameStamp::new(rng.random_range(-1.0..1.0), 0.2))[0];
        assert!(feat.iter().all(|v| *v == 1.0));
    }
}

#[test]
fn cell_midpoints_match_bilinear_oracle() {
    let f = random_field(small_config(), 4);
    let h = f.config.hidden;
    let mut rng = seeded(5);
    for _ in 0..50 {
        // midpoints of the level-2 cells (8 vertices per axis)
        let mid = |rng: &mut Rng| -1.0 + (rng.random_range(0..7) as f64 + 0.5) * 2.0 / 7.0;
        let p = Vec3::new(mid(&mut rng), mid(&mut rng), mid(&mut rng));
        let s = FrameStamp::new(mid(&mut rng), mid(&mut rng));
        let q = coords(&p, s);
        let feat = &f.encode(&[p], s)[0];
        for (level, planes) in f.planes().chunks(9).enumerate() {
            for c in 0..h {
                let mut expected = 1.0;
                for k in 0..9 {
                    let plane = level * 9 + k;
                    let (a, b) = planes[k].axes;
                    expected *= oracle_sample(&f, plane, q[a], q[b], c);
                }
                assert!((feat[level * h + c] - expected).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn scaling_a_plane_scales_its_level() {
    let mut f = random_field(small_config(), 6);
    let p = [Vec3::new(0.13, -0.4, 0.77)];
    let s = FrameStamp::new(0.3, -0.6);
    let before = f.encode(&p, s)[0].clone();
    for v in f.plane_features_mut(11) {
        *v *= 2.5;
    }
    let after = &f.encode(&p, s)[0];
    let h = f.config.hidden;
    for c in 0..h {
        // plane 11 lives in the second level
        assert_eq!(after[c], before[c]);
        assert!((after[h + c] - 2.5 * before[h + c]).abs() < 1e-12 * before[h + c].abs().max(1.0));
    }
}

#[test]
fn stamps_differing_in_tj_differ() {
    let f = random_field(small_config(), 7);
    let p = [Vec3::new(0.2, 0.1, -0.3)];
    let a = &f.encode(&p, FrameStamp::new(0.5, 0.0))[0];
    let b = &f.encode(&p, FrameStamp::new(0.5, 0.4))[0];
    assert!(a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn encoding_is_lipschitz() {
    let f = random_field(small_config(), 8);
    let mut rng = seeded(9);
    // bilinear cells of width 2/7 and features within [0.5, 1.5] bound the slope
    let max_f: f64 = f.params[..f.plane_param_count()].iter().fold(0.0, |m, v| m.max(v.abs()));
    let slope = 9.0 * max_f.powi(9) * 2.0 * 3.5;
    for _ in 0..200 {
        let p = Vec3::from_fn(|_, _| rng.random_range(-0.95..0.95));
        let dir = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let delta = 1e-5;
        let s = FrameStamp::new(0.1, -0.2);
        let a = &f.encode(&[p], s)[0];
        let b = &f.encode(&[p + dir * delta], s)[0];
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff <= slope * delta * 3.0_f64.sqrt(), "{diff}");
    }
}

#[test]
fn fresh_field_leaves_cloud_unchanged() {
    let mut rng = seeded(10);
    let f = DistortionField::new(FieldConfig::default(), unit_box(), &mut rng).unwrap();
    let g = random_cloud(30, 11);
    for s in [FrameStamp::ORIGIN, FrameStamp::new(0.7, -0.2)] {
        let (d, delta) = f.deform(&g, s);
        assert_eq!(d, g);
        assert_eq!(delta.mean_l1(), 0.0);
    }
    assert_eq!(canonical(&g), g);
    assert_eq!(canonical(&canonical(&g)), g);
}

#[test]
fn zero_decoder_leaves_cloud_unchanged() {
    let mut f = random_field(small_config(), 12);
    let np = f.plane_param_count();
    f.params[np..].fill(0.0);
    let g = random_cloud(10, 13);
    assert_eq!(f.deform(&g, FrameStamp::new(0.2, 0.3)).0, g);
}

/// A forward pass written out by hand for a one-level, one-channel field.
#[test]
fn hand_traced_single_gaussian() {
    let cfg = FieldConfig {
        hidden: 1,
        resolution: 2,
        levels: vec![1],
        mlp_width: 1,
        additive_scale: false,
        init_noise: 0.0,
    };
    let mut f = DistortionField::zeroed(cfg, unit_box()).unwrap();
    // plane k holds vertex values 1 + 0.1k at (0,0), rising 0.2 per vertex index sum
    for k in 0..9 {
        let feats = f.plane_features_mut(k);
        for j in 0..2 {
            for i in 0..2 {
                feats[j * 2 + i] = 1.0 + 0.1 * k as f64 + 0.2 * (i + j) as f64;
            }
        }
    }
    // layers: merge (1->1, 1->1), heads (1->1, 1->3|4|3); weights then biases
    let np = f.plane_param_count();
    let mlp: Vec<f64> = vec![
        2.0, -0.5, // merge 0: w, b
        1.5, 0.25, // merge 1
        1.0, 0.0, // x head hidden
        0.1, 0.2, 0.3, 0.0, 0.0, 0.01, // x head out: w (3), b (3)
        -1.0, 0.0, // r head hidden (negative, so ReLU kills it)
        1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, // r head out
        0.001, 0.1, // s head hidden
        1.0, -1.0, 2.0, 0.0, 0.0, 0.0, // s head out
    ];
    assert_eq!(f.params.len() - np, mlp.len());
    f.params[np..].copy_from_slice(&mlp);

    let p = Vec3::new(0.5, -0.5, 0.0);
    let s = FrameStamp::new(0.0, 1.0);
    let q = [0.5, -0.5, 0.0, 0.0, 1.0];
    let mut feat = 1.0;
    for (k, (a, b)) in AXIS_PAIRS.iter().enumerate() {
        let (u, v) = ((q[*a] + 1.0) / 2.0, (q[*b] + 1.0) / 2.0);
        // bilinear of 1 + 0.1k + 0.2(i + j) is linear: 1 + 0.1k + 0.2(u + v)
        feat *= 1.0 + 0.1 * k as f64 + 0.2 * (u + v);
    }
    let relu = |x: f64| x.max(0.0);
    let fd = 1.5 * relu(2.0 * feat - 0.5) + 0.25;
    let hx = relu(fd);
    let dx = Vec3::new(0.1 * hx, 0.2 * hx, 0.3 * hx + 0.01);
    let dr = [0.5; 4];
    let hs = relu(0.001 * fd + 0.1);
    let ds = Vec3::new(hs, -hs, 2.0 * hs);

    let d = f.deltas(&[p], s);
    assert!((d.dx[0] - dx).amax() < 1e-12);
    assert!(d.dr[0].iter().zip(&dr).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!((d.ds[0] - ds).amax() < 1e-12);

    let mut g = GaussianCloud::new();
    g.push(p, Vec3::new(0.1, 0.2, 0.3), [1.0, 0.0, 0.0, 0.0], 0.5, Vec3::repeat(0.5));
    let (out, _) = f.deform(&g, s);
    assert!((out.centers[0] - (p + dx)).amax() < 1e-12);
    // (1.5, 0.5, 0.5, 0.5) / sqrt(3)
    let r = 3.0_f64.sqrt();
    let expect = [1.5 / r, 0.5 / r, 0.5 / r, 0.5 / r];
    assert!(out.rotations[0].iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));
    let want = Vec3::new(0.1 * ds.x.exp(), 0.2 * ds.y.exp(), 0.3 * ds.z.exp());
    assert!((out.scale(0) - want).amax() < 1e-12 * want.amax());
}

#[test]
fn additive_scale_mode() {
    let mut f = random_field(FieldConfig { additive_scale: true, ..small_config() }, 14);
    let g = random_cloud(5, 15);
    let (out, d) = f.deform(&g, FrameStamp::new(0.3, 0.3));
    for i in 0..5 {
        for a in 0..3 {
            let want = (g.scale(i)[a] + d.ds[i][a]).max(MIN_ADDITIVE_SCALE);
            assert!((out.scale(i)[a] - want).abs() < 1e-12 * want.max(1.0));
        }
    }
    f.params.fill(0.0);
    assert_eq!(f.deform(&g, FrameStamp::ORIGIN).0.log_scales.len(), 5);
}

#[test]
fn total_variation_of_hand_built_plane() {
    let cfg = FieldConfig {
        hidden: 2,
        resolution: 2,
        levels: vec![1],
        mlp_width: 1,
        additive_scale: false,
        init_noise: 0.0,
    };
    let mut f = DistortionField::zeroed(cfg, unit_box()).unwrap();
    let np = f.plane_param_count();
    f.params[..np].fill(1.0);
    assert_eq!(f.total_variation(None), 0.0);
    // rows [1, 2] and [3, 4]; channel 1 doubled
    let feats = f.plane_features_mut(0);
    for (k, v) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
        feats[k * 2] = *v;
        feats[k * 2 + 1] = 2.0 * v;
    }
    assert_eq!(f.total_variation(None), 6.0 + 12.0);

    let mut grad = vec![0.0; f.param_count()];
    f.total_variation(Some(&mut grad));
    // top-left vertex only has increasing neighbors
    assert_eq!(grad[0], -2.0);
    assert_eq!(grad[6], 2.0);
}

fn scalar_loss(f: &DistortionField, g: &GaussianCloud, s: FrameStamp, w: &CloudGrad, wd: &Deformation) -> f64 {
    let (out, d) = f.deform(g, s);
    let mut total = 0.0;
    for i in 0..g.len() {
        total += out.centers[i].dot(&w.centers[i]) + out.log_scales[i].dot(&w.log_scales[i]);
        total += (0..4).map(|c| out.rotations[i][c] * w.rotations[i][c]).sum::<f64>();
        total += d.dx[i].dot(&wd.dx[i]) + d.ds[i].dot(&wd.ds[i]);
        total += (0..4).map(|c| d.dr[i][c] * wd.dr[i][c]).sum::<f64>();
    }
    total
}

fn close(a: f64, b: f64) -> bool {
    let d = (a - b).abs();
    d <= 1e-3 * a.abs().max(b.abs()) || d <= 1e-8
}

fn gradient_check(additive: bool) {
    let f = random_field(FieldConfig { additive_scale: additive, ..small_config() }, 16);
    let g = random_cloud(48, 17);
    let s = FrameStamp::new(0.35, -0.55);
    let mut rng = seeded(18);
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
    let (_, d) = f.deform(&g, s);
    let (cg, pg) = f.backward(&g, s, &d, &w, Some(&wd));

    let eps = 1e-6;
    let mut total = 0;
    let mut good = 0;
    let mut probe = |analytic: f64, plus: f64, minus: f64| {
        total += 1;
        if close(analytic, (plus - minus) / (2.0 * eps)) {
            good += 1;
        }
    };
    for _ in 0..1000 {
        let k = rng.random_range(0..f.param_count());
        let mut fp = f.clone();
        fp.params[k] += eps;
        let mut fm = f.clone();
        fm.params[k] -= eps;
        probe(pg[k], scalar_loss(&fp, &g, s, &w, &wd), scalar_loss(&fm, &g, s, &w, &wd));
    }
    for i in 0..g.len() {
        for a in 0..3 {
            let mut gp = g.clone();
            gp.centers[i][a] += eps;
            let mut gm = g.clone();
            gm.centers[i][a] -= eps;
            probe(cg.centers[i][a], scalar_loss(&f, &gp, s, &w, &wd), scalar_loss(&f, &gm, s, &w, &wd));
            let mut gp = g.clone();
            gp.log_scales[i][a] += eps;
            let mut gm = g.clone();
            gm.log_scales[i][a] -= eps;
            probe(cg.log_scales[i][a], scalar_loss(&f, &gp, s, &w, &wd), scalar_loss(&f, &gm, s, &w, &wd));
        }
        for c in 0..4 {
            let mut gp = g.clone();
            gp.rotations[i][c] += eps;
            let mut gm = g.clone();
            gm.rotations[i][c] -= eps;
            probe(cg.rotations[i][c], scalar_loss(&f, &gp, s, &w, &wd), scalar_loss(&f, &gm, s, &w, &wd));
        }
    }
    assert!(good as f64 >= 0.95 * total as f64, "{good}/{total} gradients agree");
}

#[test]
fn gradients_match_finite_differences() {
    gradient_check(false);
}

#[test]
fn additive_gradients_match_finite_differences() {
    gradient_check(true);
}

#[test]
fn backward_is_thread_count_independent() {
    let f = random_field(small_config(), 19);
    let g = random_cloud(5000, 20);
    let s = FrameStamp::new(0.1, 0.9);
    let (_, d) = f.deform(&g, s);
    let mut w = CloudGrad::zeros(g.len());
    for (i, c) in w.centers.iter_mut().enumerate() {
        *c = Vec3::repeat((i % 7) as f64 - 3.0);
    }
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| f.backward(&g, s, &d, &w, None))
    };
    let (a, pa) = run(1);
    let (b, pb) = run(4);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}
