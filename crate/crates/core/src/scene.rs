//! Procedural scenes with analytic depth.
//!
//! Scenes are built from textured spheres, infinite planes and axis-aligned
//! boxes, all expressed in the rig frame. Rays that miss every primitive land
//! on a rig-centered background sphere of radius `background_depth`, so every
//! ray has a well-defined first hit and intensity.

use crate::image::Map2;
use crate::math::Vec3;
use crate::rig::{Camera, ErpGrid, InverseDepthSampling};
use crate::rng::{derive_seed, mix64, tag, Stream};
use crate::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Grayscale surface pattern as a function of 3D position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Texture {
    Uniform { value: f64 },
    /// Multi-octave value noise. Octave `o` samples a hashed integer lattice at
    /// frequency `frequency·2^o` with amplitude `0.5^o`; the sum is rescaled to
    /// `[0, 1]` and stretched by `contrast` around 0.5.
    ValueNoise {
        seed: u64,
        frequency: f64,
        octaves: u32,
        contrast: f64,
    },
}

impl Texture {
    pub fn sample<T: Scalar>(&self, p: Vec3<T>) -> T {
        match *self {
            Texture::Uniform { value } => T::lit(value.clamp(0.0, 1.0)),
            Texture::ValueNoise {
                seed,
                frequency,
                octaves,
                contrast,
            } => {
                let p = [p.x.as_f64(), p.y.as_f64(), p.z.as_f64()];
                let (mut sum, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, frequency);
                for o in 0..octaves.max(1) {
                    let s = mix64(seed ^ u64::from(o).wrapping_mul(0x5851_F42D_4C95_7F2D));
                    sum += amp * lattice_noise(s, [p[0] * freq, p[1] * freq, p[2] * freq]);
                    norm += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                let v = 0.5 + contrast * (sum / norm - 0.5);
                T::lit(v.clamp(0.0, 1.0))
            }
        }
    }
}

fn lattice_value(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = derive_seed(&[seed, i as u64, j as u64, k as u64]);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothstep-interpolated value noise in `[0, 1]`.
fn lattice_noise(seed: u64, p: [f64; 3]) -> f64 {
    let base = p.map(|v| v.floor());
    let f = [smooth(p[0] - base[0]), smooth(p[1] - base[1]), smooth(p[2] - base[2])];
    let [i, j, k] = base.map(|v| v as i64);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut c = [0.0; 4];
    for (n, cell) in c.iter_mut().enumerate() {
        let (dj, dk) = ((n & 1) as i64, (n >> 1) as i64);
        *cell = lerp(
            lattice_value(seed, i, j + dj, k + dk),
            lattice_value(seed, i + 1, j + dj, k + dk),
            f[0],
        );
    }
    lerp(lerp(c[0], c[1], f[1]), lerp(c[2], c[3], f[1]), f[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Infinite plane through `point` with normal `normal`.
    Plane { point: [f64; 3], normal: [f64; 3] },
    /// Axis-aligned box; seen from inside it acts as a room.
    Cuboid { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub texture: Texture,
}

impl Primitive {
    /// Smallest positive ray parameter of an intersection, if any.
    pub fn intersect<T: Scalar>(&self, origin: Vec3<T>, dir: Vec3<T>) -> Option<T> {
        let eps = T::lit(1e-9);
        match &self.shape {
            Shape::Sphere { center, radius } => {
                let oc = origin - Vec3::from_array(center.map(T::lit));
                let b = oc.dot(dir);
                let c = oc.dot(oc) - T::lit(radius * radius);
                let a = dir.dot(dir);
                let disc = b * b - a * c;
                if disc < T::zero() {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / a;
                let t1 = (-b + sq) / a;
                [t0, t1].into_iter().find(|&t| t > eps)
            }
            Shape::Plane { point, normal } => {
                let n = Vec3::from_array(normal.map(T::lit));
                let denom = n.dot(dir);
                if denom.abs() < T::lit(1e-12) {
                    return None;
                }
                let t = n.dot(Vec3::from_array(point.map(T::lit)) - origin) / denom;
                (t > eps).then_some(t)
            }
            Shape::Cuboid { min, max } => {
                let o = origin.to_array();
                let d = dir.to_array();
                let (mut tn, mut tf) = (T::neg_infinity(), T::infinity());
                for a in 0..3 {
                    let (lo, hi) = (T::lit(min[a]), T::lit(max[a]));
                    if d[a].abs() < T::lit(1e-15) {
                        if o[a] < lo || o[a] > hi {
                            return None;
                        }
                        continue;
                    }
                    let inv = d[a].recip();
                    let (mut t0, mut t1) = ((lo - o[a]) * inv, (hi - o[a]) * inv);
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    tn = tn.max(t0);
                    tf = tf.min(t1);
                }
                if tn > tf {
                    return None;
                }
                [tn, tf].into_iter().find(|&t| t > eps)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub primitives: Vec<Primitive>,
    /// Radius of the rig-centered sphere hit by rays that miss everything.
    pub background_depth: f64,
    pub background: Texture,
}

/// First intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<T> {
    pub distance: T,
    /// Index into `primitives`, `None` for the background sphere.
    pub primitive: Option<usize>,
    pub point: Vec3<T>,
}

impl Scene {
    /// Casts a ray with unit direction `dir`.
    pub fn trace<T: Scalar>(&self, origin: Vec3<T>, dir: Vec3<T>) -> Hit<T> {
        let mut best: Option<(T, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(t) = p.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        match best {
            Some((t, i)) => Hit {
                distance: t,
                primitive: Some(i),
                point: origin + dir * t,
            },
            None => {
                let bg = Primitive {
                    shape: Shape::Sphere {
                        center: [0.0; 3],
                        radius: self.background_depth,
                    },
                    texture: self.background.clone(),
                };
                // Origins inside the background sphere always hit it.
                let t = bg.intersect(origin, dir).unwrap_or(T::lit(self.background_depth));
                Hit {
                    distance: t,
                    primitive: None,
                    point: origin + dir * t,
                }
            }
        }
    }

    pub fn shade<T: Scalar>(&self, hit: &Hit<T>) -> T {
        match hit.primitive {
            Some(i) => self.primitives[i].texture.sample(hit.point),
            None => self.background.sample(hit.point),
        }
    }

    /// Radial distance from the rig origin along `dir`.
    pub fn depth_along<T: Scalar>(&self, dir: Vec3<T>) -> T {
        self.trace(Vec3::zero(), dir).distance
    }
}

/// Renders a fisheye view. Pixels beyond the FoV are invalid and zero.
pub fn render_fisheye<T: Scalar>(scene: &Scene, cam: &Camera<T>) -> Map2<T> {
    let intr = &cam.intrinsics;
    let (w, h) = (intr.width(), intr.height());
    let origin = cam.pose.translation;
    let (values, valid): (Vec<T>, Vec<bool>) = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (T::from_usize_lossy(i % w), T::from_usize_lossy(i / w));
            match intr.unproject(u, v) {
                Some(d) => {
                    let dir = cam.pose.direction_to_rig(d);
                    let hit = scene.trace(origin, dir);
                    (scene.shade(&hit), true)
                }
                None => (T::zero(), false),
            }
        })
        .unzip();
    Map2 {
        width: w,
        height: h,
        values,
        valid,
    }
}

/// Metric radial depth for every ERP pixel.
pub fn erp_depth<T: Scalar>(scene: &Scene, grid: &ErpGrid) -> Map2<T> {
    let w = grid.width;
    let values: Vec<T> = (0..grid.len())
        .into_par_iter()
        .map(|i| scene.depth_along(grid.pixel_ray::<T>(i % w, i / w)))
        .collect();
    let valid = values.iter().map(|d| d.is_finite() && *d > T::zero()).collect();
    Map2 {
        width: w,
        height: grid.height,
        values,
        valid,
    }
}

/// Ground-truth continuous inverse-depth index per ERP pixel.
pub fn gt_erp_inverse_depth<T: Scalar>(scene: &Scene, grid: &ErpGrid, sampling: &InverseDepthSampling<T>) -> Map2<T> {
    let mut depth = erp_depth(scene, grid);
    for (v, &ok) in depth.values.iter_mut().zip(&depth.valid) {
        *v = if ok { sampling.index_of_depth(*v) } else { T::zero() };
    }
    depth
}

// ---------------------------------------------------------------------------
// Canned suite

fn noise_texture(rng: &mut Stream) -> Texture {
    Texture::ValueNoise {
        seed: rng.next_u64(),
        frequency: rng.uniform_range(TEXTURE_FREQ.0, TEXTURE_FREQ.1),
        octaves: 2,
        contrast: 1.6,
    }
}

/// Base texture frequency range, cycles per meter.
const TEXTURE_FREQ: (f64, f64) = (1.5, 2.4);

/// Picks an object center at a horizontal-ish direction and given distance.
fn place(rng: &mut Stream, dist: f64) -> [f64; 3] {
    let az = rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI);
    let el = rng.uniform_range(-0.5, 0.6);
    [dist * el.cos() * az.sin(), dist * el.sin(), dist * el.cos() * az.cos()]
}

fn room_scene(name: String, rng: &mut Stream) -> Scene {
    let min = [
        -rng.uniform_range(2.0, 4.5),
        -rng.uniform_range(1.2, 1.8),
        -rng.uniform_range(2.0, 4.5),
    ];
    let max = [
        rng.uniform_range(2.0, 4.5),
        rng.uniform_range(1.4, 2.4),
        rng.uniform_range(2.0, 4.5),
    ];
    let mut primitives = vec![Primitive {
        shape: Shape::Cuboid { min, max },
        texture: noise_texture(rng),
    }];
    let n = rng.int_inclusive(3, 5);
    for _ in 0..n {
        let dist = rng.uniform_range(1.3, 2.2);
        let c = place(rng, dist);
        let shape = if rng.uniform() < 0.5 {
            Shape::Sphere {
                center: c,
                radius: rng.uniform_range(0.25, 0.5),
            }
        } else {
            let h = [
                rng.uniform_range(0.2, 0.45),
                rng.uniform_range(0.2, 0.45),
                rng.uniform_range(0.2, 0.45),
            ];
            Shape::Cuboid {
                min: [c[0] - h[0], c[1] - h[1], c[2] - h[2]],
                max: [c[0] + h[0], c[1] + h[1], c[2] + h[2]],
            }
        };
        primitives.push(Primitive {
            shape,
            texture: noise_texture(rng),
        });
    }
    Scene {
        name,
        primitives,
        background_depth: 50.0,
        background: noise_texture(rng),
    }
}

fn open_scene(name: String, rng: &mut Stream) -> Scene {
    let floor = -rng.uniform_range(1.2, 1.8);
    let mut primitives = vec![Primitive {
        shape: Shape::Plane {
            point: [0.0, floor, 0.0],
            normal: [0.0, 1.0, 0.0],
        },
        texture: noise_texture(rng),
    }];
    let n = rng.int_inclusive(4, 7);
    for _ in 0..n {
        let dist = rng.uniform_range(1.3, 3.0);
        let c = place(rng, dist);
        primitives.push(Primitive {
            shape: Shape::Sphere {
                center: c,
                radius: rng.uniform_range(0.3, 0.6),
            },
            texture: noise_texture(rng),
        });
    }
    Scene {
        name,
        primitives,
        background_depth: rng.uniform_range(5.0, 8.0),
        background: noise_texture(rng),
    }
}

/// Number of scenes in the canned suite.
pub const SUITE_SIZE: usize = 12;

/// The canned 12-scene suite: even indices are furnished rooms, odd indices
/// are open ground planes with floating spheres under a textured dome.
pub fn canned_suite(seed: u64) -> Vec<Scene> {
    (0..SUITE_SIZE)
        .map(|i| {
            let mut rng = Stream::from_keys(&[seed, tag("scene"), i as u64]);
            if i % 2 == 0 {
                room_scene(format!("room_{i:02}"), &mut rng)
            } else {
                open_scene(format!("open_{i:02}"), &mut rng)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{CameraPose, FisheyeIntrinsics, Rig};
    use approx::assert_abs_diff_eq;

    fn textured() -> Texture {
        Texture::ValueNoise {
            seed: 3,
            frequency: 4.0,
            octaves: 3,
            contrast: 1.5,
        }
    }

    #[test]
    fn texture_stays_in_unit_interval() {
        let t = textured();
        for i in 0..2000 {
            let p = Vec3::new(i as f64 * 0.013, (i as f64 * 0.37).sin(), -(i as f64) * 0.021);
            let v: f64 = t.sample(p);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn uniform_texture_renders_constant_image() {
        let scene = Scene {
            name: "flat".into(),
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 3.0,
                },
                texture: Texture::Uniform { value: 0.42 },
            }],
            background_depth: 10.0,
            background: Texture::Uniform { value: 0.42 },
        };
        let rig = Rig::<f64>::square(0.4, [48, 48], 110f64.to_radians()).unwrap();
        let img = render_fisheye(&scene, &rig.cameras[0]);
        for (v, ok) in img.values.iter().zip(&img.valid) {
            if *ok {
                assert_eq!(*v, 0.42);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        // corners of the square image fall outside the FoV circle
        assert!(!img.is_valid(0, 0));
        assert!(!img.is_valid(47, 47));
        assert!(img.is_valid(24, 24));
    }

    #[test]
    fn principal_pixel_sees_axis_plane_intersection() {
        let tex = textured();
        let scene = Scene {
            name: "wall".into(),
            primitives: vec![Primitive {
                shape: Shape::Plane {
                    point: [0.0, 0.0, 2.0],
                    normal: [0.0, 0.0, -1.0],
                },
                texture: tex.clone(),
            }],
            background_depth: 100.0,
            background: Texture::Uniform { value: 0.0 },
        };
        let intr = FisheyeIntrinsics::new(20.0, [16.0, 16.0], [33, 33], 1.5).unwrap();
        let t = Vec3::new(0.3, -0.1, 0.0);
        let cam = Camera {
            intrinsics: intr,
            pose: CameraPose::new(crate::math::Mat3::identity(), t).unwrap(),
        };
        let img = render_fisheye(&scene, &cam);
        // optical axis (0,0,1) from (0.3,-0.1,0) hits z=2 at (0.3,-0.1,2)
        let expect: f64 = tex.sample(Vec3::new(0.3, -0.1, 2.0));
        assert_abs_diff_eq!(img.get(16, 16), expect, epsilon = 1e-12);
    }

    #[test]
    fn concentric_sphere_gives_constant_ground_truth() {
        let scene = Scene {
            name: "ball".into(),
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 2.5,
                },
                texture: textured(),
            }],
            background_depth: 50.0,
            background: Texture::Uniform { value: 0.5 },
        };
        let grid = ErpGrid::new(32, 16).unwrap();
        let s = InverseDepthSampling::<f64>::new(32, 0.5, 20.0).unwrap();
        let gt = gt_erp_inverse_depth(&scene, &grid, &s);
        let first = gt.values[0];
        assert!(gt.values.iter().all(|&v| (v - first).abs() < 1e-12));
        assert_abs_diff_eq!(first, s.index_of_depth(2.5), epsilon = 1e-12);
    }

    #[test]
    fn forward_plane_ground_truth_inverts_schedule() {
        let scene = Scene {
            name: "wall".into(),
            primitives: vec![Primitive {
                shape: Shape::Plane {
                    point: [0.0, 0.0, 2.0],
                    normal: [0.0, 0.0, 1.0],
                },
                texture: textured(),
            }],
            background_depth: 50.0,
            background: Texture::Uniform { value: 0.5 },
        };
        let grid = ErpGrid::new(64, 32).unwrap();
        let s = InverseDepthSampling::new(32, 0.5, 20.0).unwrap();
        let gt = gt_erp_inverse_depth(&scene, &grid, &s);
        // pixel (32, 16) is slightly off-axis; pick the exact ray to compute the oracle
        let ray: Vec3<f64> = grid.pixel_ray(32, 16);
        let depth = 2.0 / ray.z;
        let rho0 = 1.0 / 0.5;
        let step = (rho0 - 1.0 / 20.0) / 31.0;
        assert_abs_diff_eq!(gt.get(32, 16), (rho0 - 1.0 / depth) / step, epsilon = 1e-9);
    }

    #[test]
    fn far_depth_clamps_to_last_bin() {
        let scene = Scene {
            name: "empty".into(),
            primitives: vec![],
            background_depth: 500.0,
            background: Texture::Uniform { value: 0.5 },
        };
        let grid = ErpGrid::new(8, 4).unwrap();
        let s = InverseDepthSampling::new(32, 0.5, 20.0).unwrap();
        let gt = gt_erp_inverse_depth(&scene, &grid, &s);
        assert!(gt.values.iter().all(|&v| v == 31.0));
    }

    #[test]
    fn cuboid_from_inside_and_outside() {
        let b = Primitive {
            shape: Shape::Cuboid {
                min: [-1.0, -1.0, -1.0],
                max: [1.0, 1.0, 2.0],
            },
            texture: Texture::Uniform { value: 0.5 },
        };
        let t: f64 = b.intersect(Vec3::zero(), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(t, 2.0, epsilon = 1e-12);
        let t: f64 = b.intersect(Vec3::new(0.0, 0.0, -5.0), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(t, 4.0, epsilon = 1e-12);
        assert!(b
            .intersect(Vec3::new(0.0, 5.0, -5.0), Vec3::new(0.0, 0.0, 1.0))
            .is_none());
    }

    #[test]
    fn suite_is_reproducible_and_encloses_rig() {
        let a = canned_suite(7);
        let b = canned_suite(7);
        assert_eq!(a, b);
        assert_eq!(a.len(), SUITE_SIZE);
        assert_ne!(a, canned_suite(8));
        // all rig cameras sit in free space
        for s in &a {
            for p in &s.primitives {
                if let Shape::Sphere { center, radius } = p.shape {
                    let d = Vec3::from_array(center).norm();
                    assert!(d - radius > 0.6, "{}: sphere too close to rig", s.name);
                }
            }
        }
    }

    #[test]
    fn scene_json_round_trip() {
        let s = &canned_suite(1)[0];
        let text = serde_json::to_string(s).unwrap();
        let back: Scene = serde_json::from_str(&text).unwrap();
        assert_eq!(*s, back);
    }
}
