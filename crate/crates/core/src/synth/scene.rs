//! Analytic scenes and their ray-cast ground truth.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Pose, Vec3};
use crate::imaging::{DepthKind, DepthMap, Image, PointMap};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Texture {
    Solid { color: [f64; 3] },
    /// 3D checkerboard with cubic cells of side `cell`.
    Checker { a: [f64; 3], b: [f64; 3], cell: f64 },
}

impl Texture {
    fn at(&self, p: &Vec3) -> Vec3 {
        match self {
            Texture::Solid { color } => Vec3::from(*color),
            Texture::Checker { a, b, cell } => {
                let k: i64 = p.iter().map(|v| (v / cell).floor() as i64).sum();
                Vec3::from(if k.rem_euclid(2) == 0 { *a } else { *b })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        texture: Texture,
    },
    /// Axis-aligned box.
    Cuboid {
        center: [f64; 3],
        half: [f64; 3],
        texture: Texture,
    },
    /// Rectangle spanned by the half-axes `u` and `v` around `center`.
    Plane {
        center: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
        texture: Texture,
    },
}

struct Hit {
    t: f64,
    normal: Vec3,
}

impl Primitive {
    pub fn texture(&self) -> &Texture {
        match self {
            Primitive::Sphere { texture, .. } | Primitive::Cuboid { texture, .. } | Primitive::Plane { texture, .. } => {
                texture
            }
        }
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let c = Vec3::from(*center);
                (c - Vec3::repeat(*radius), c + Vec3::repeat(*radius))
            }
            Primitive::Cuboid { center, half, .. } => {
                let (c, h) = (Vec3::from(*center), Vec3::from(*half));
                (c - h, c + h)
            }
            Primitive::Plane { center, u, v, .. } => {
                let c = Vec3::from(*center);
                let e = Vec3::from(*u).abs() + Vec3::from(*v).abs();
                (c - e, c + e)
            }
        }
    }

    /// Nearest hit with `t > min_t` along `o + t d`.
    fn intersect(&self, o: &Vec3, d: &Vec3, min_t: f64) -> Option<Hit> {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let c = Vec3::from(*center);
                let oc = o - c;
                let a = d.dot(d);
                let b = oc.dot(d);
                let disc = b * b - a * (oc.dot(&oc) - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = [(-b - s) / a, (-b + s) / a].into_iter().find(|t| *t > min_t)?;
                Some(Hit {
                    t,
                    normal: (o + d * t - c) / *radius,
                })
            }
            Primitive::Cuboid { center, half, .. } => {
                let (c, h) = (Vec3::from(*center), Vec3::from(*half));
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut n0, mut n1) = (Vec3::zeros(), Vec3::zeros());
                for a in 0..3 {
                    let (lo, hi) = (c[a] - h[a], c[a] + h[a]);
                    if d[a] == 0.0 {
                        if o[a] < lo || o[a] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
                    let mut na = Vec3::zeros();
                    na[a] = -1.0;
                    let mut nb = -na;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                        std::mem::swap(&mut na, &mut nb);
                    }
                    if ta > t0 {
                        t0 = ta;
                        n0 = na;
                    }
                    if tb < t1 {
                        t1 = tb;
                        n1 = nb;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > min_t {
                    Some(Hit { t: t0, normal: n0 })
                } else if t1 > min_t {
                    Some(Hit { t: t1, normal: n1 })
                } else {
                    None
                }
            }
            Primitive::Plane { center, u, v, .. } => {
                let (c, u, v) = (Vec3::from(*center), Vec3::from(*u), Vec3::from(*v));
                let n = u.cross(&v);
                let denom = n.dot(d);
                if denom == 0.0 {
                    return None;
                }
                let t = n.dot(&(c - o)) / denom;
                if t <= min_t {
                    return None;
                }
                let r = o + d * t - c;
                if r.dot(&u).abs() > u.norm_squared() || r.dot(&v).abs() > v.norm_squared() {
                    return None;
                }
                Some(Hit { t, normal: n.normalize() })
            }
        }
    }
}

/// Diffuse primitives under one directional light.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthScene {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    /// Direction toward the light.
    pub light: [f64; 3],
    pub ambient: f64,
}

/// Ground truth of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct GtView {
    pub image: Image,
    /// Camera-frame z; invalid on background pixels.
    pub depth: DepthMap,
    /// Camera-frame points; confidence 1 on hits, 0 on background.
    pub pointmap: PointMap,
}

impl SynthScene {
    /// Textured spheres and boxes in front of a checkered back wall, all
    /// within a few units of the input camera's optical axis.
    pub fn random(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut color = || -> [f64; 3] { std::array::from_fn(|_| rng.random_range(0.1..0.95)) };
        let (wa, wb) = (color(), color());
        let mut primitives = vec![Primitive::Plane {
            center: [0.0, 0.0, 7.0],
            u: [4.5, 0.0, 0.0],
            v: [0.0, 4.5, 0.0],
            texture: Texture::Checker { a: wa, b: wb, cell: 0.6 },
        }];
        let tex = |rng: &mut crate::rng::Rng| {
            let (a, b) = (
                std::array::from_fn(|_| rng.random_range(0.1..0.95)),
                std::array::from_fn(|_| rng.random_range(0.1..0.95)),
            );
            Texture::Checker {
                a,
                b,
                cell: rng.random_range(0.15..0.35),
            }
        };
        for k in 0..6 {
            let z = rng.random_range(3.5..5.5);
            let center = [rng.random_range(-0.35..0.35) * z, rng.random_range(-0.3..0.3) * z, z];
            let texture = tex(&mut rng);
            primitives.push(if k % 2 == 0 {
                Primitive::Sphere {
                    center,
                    radius: rng.random_range(0.4..0.8),
                    texture,
                }
            } else {
                Primitive::Cuboid {
                    center,
                    half: std::array::from_fn(|_| rng.random_range(0.25..0.6)),
                    texture,
                }
            });
        }
        Self {
            primitives,
            background: [0.0; 3],
            light: [0.4, -0.6, -0.7],
            ambient: 0.35,
        }
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        self.primitives.iter().map(Primitive::bounds).reduce(|(a, b), (c, d)| (a.inf(&c), b.sup(&d)))
    }

    /// Closest primitive hit as `(t, primitive index, normal)`.
    fn trace(&self, o: &Vec3, d: &Vec3) -> Option<(f64, usize, Vec3)> {
        let mut best: Option<(f64, usize, Vec3)> = None;
        for (k, p) in self.primitives.iter().enumerate() {
            if let Some(h) = p.intersect(o, d, 1e-9) {
                if best.is_none_or(|b| h.t < b.0) {
                    best = Some((h.t, k, h.normal));
                }
            }
        }
        best
    }

    fn shade(&self, k: usize, p: &Vec3, normal: &Vec3, d: &Vec3) -> Vec3 {
        let n = if normal.dot(d) > 0.0 { -normal } else { *normal };
        let l = Vec3::from(self.light).normalize();
        let diffuse = n.dot(&l).max(0.0);
        self.primitives[k].texture().at(p) * (self.ambient + (1.0 - self.ambient) * diffuse)
    }

    /// Radiance seen along a world ray, or the background.
    pub fn radiance(&self, o: &Vec3, d: &Vec3) -> Vec3 {
        match self.trace(o, d) {
            Some((t, k, n)) => self.shade(k, &(o + d * t), &n, d),
            None => Vec3::from(self.background),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::EmptyScene);
        }
        Ok(())
    }
}

/// Color samples per pixel along each axis.
pub const SUPERSAMPLE: usize = 3;

/// Ray-casts every pixel: geometry from the ray through the pixel center,
/// color averaged over a regular subpixel grid. Rays are parameterized by
/// camera depth, so the hit parameter is the depth itself.
pub fn render_gt(scene: &SynthScene, pose: &Pose, k: &Intrinsics) -> GtView {
    let (w, h) = (k.width, k.height);
    let rows: Vec<Vec<(Vec3, Option<(f64, Vec3)>)>> = (0..h)
        .into_par_iter()
        .map(|j| {
            (0..w)
                .map(|i| {
                    let mut c = Vec3::zeros();
                    for sj in 0..SUPERSAMPLE {
                        for si in 0..SUPERSAMPLE {
                            let u = i as f64 + (si as f64 + 0.5) / SUPERSAMPLE as f64;
                            let v = j as f64 + (sj as f64 + 0.5) / SUPERSAMPLE as f64;
                            c += scene.radiance(&pose.translation, &(pose.rotation * k.ray(u, v)));
                        }
                    }
                    c /= (SUPERSAMPLE * SUPERSAMPLE) as f64;
                    let ray = k.pixel_center_ray(i, j);
                    let hit = scene.trace(&pose.translation, &(pose.rotation * ray)).map(|(t, _, _)| (t, ray * t));
                    (c, hit)
                })
                .collect()
        })
        .collect();
    let mut color = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    let mut points = Vec::with_capacity(w * h);
    let mut conf = Vec::with_capacity(w * h);
    for (c, hit) in rows.into_iter().flatten() {
        color.extend(c.iter().map(|v| v.clamp(0.0, 1.0) as f32));
        match hit {
            Some((t, p)) => {
                depth.push(t);
                valid.push(true);
                points.push(p);
                conf.push(1.0);
            }
            None => {
                depth.push(0.0);
                valid.push(false);
                points.push(Vec3::zeros());
                conf.push(0.0);
            }
        }
    }
    GtView {
        image: Image::new(w, h, 3, color).expect("sized"),
        depth: DepthMap::with_mask(w, h, depth, valid, DepthKind::Absolute).expect("positive depths"),
        pointmap: PointMap::new(w, h, points, conf).expect("sized"),
    }
}
