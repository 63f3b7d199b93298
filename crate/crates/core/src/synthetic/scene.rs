//! Textured primitives, surface sampling and a pinhole ray caster.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{CameraModel, Point3, RigidTransform};
use crate::io::ppm::RgbImage;

const BACKGROUND: [f64; 3] = [0.08, 0.08, 0.1];

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, x: i64, y: i64, z: i64, channel: u64) -> f64 {
    let mut h = splitmix(seed ^ channel.wrapping_mul(0xA24B_AED4_963E_E407));
    for v in [x, y, z] {
        h = splitmix(h ^ v as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinear value noise with smoothstep weights; each lattice vertex holds
/// a random color in `[0.1, 0.9]³`.
fn value_noise(p: &Point3, cell: f64, seed: u64) -> [f64; 3] {
    let q = p.coords / cell;
    let base = q.map(f64::floor);
    let f = q - base;
    let (x0, y0, z0) = (base.x as i64, base.y as i64, base.z as i64);
    let w = [smooth(f.x), smooth(f.y), smooth(f.z)];
    let mut out = [0.0; 3];
    for corner in 0..8 {
        let (dx, dy, dz) = ((corner & 1) as i64, ((corner >> 1) & 1) as i64, ((corner >> 2) & 1) as i64);
        let weight = [dx, dy, dz]
            .iter()
            .zip(&w)
            .map(|(&d, &t)| if d == 1 { t } else { 1.0 - t })
            .product::<f64>();
        for (c, o) in out.iter_mut().enumerate() {
            *o += weight * (0.1 + 0.8 * lattice(seed, x0 + dx, y0 + dy, z0 + dz, c as u64));
        }
    }
    out
}

/// Two octaves of colored value noise, optionally darkened on alternate
/// checker cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub seed: u64,
    pub coarse_cell: f64,
    pub fine_cell: f64,
    pub checker_cell: Option<f64>,
}

impl Texture {
    pub fn noise(seed: u64) -> Self {
        Self {
            seed,
            coarse_cell: 0.3,
            fine_cell: 0.07,
            checker_cell: Some(0.1),
        }
    }

    pub fn uniform_gray() -> Self {
        Self {
            seed: 0,
            coarse_cell: f64::INFINITY,
            fine_cell: f64::INFINITY,
            checker_cell: None,
        }
    }

    pub fn color(&self, p: &Point3) -> [f64; 3] {
        if !self.coarse_cell.is_finite() {
            return [0.5; 3];
        }
        let a = value_noise(p, self.coarse_cell, self.seed);
        let b = value_noise(p, self.fine_cell, self.seed.wrapping_add(1));
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = 0.7 * a[k] + 0.3 * b[k];
        }
        if let Some(cell) = self.checker_cell {
            let parity = (p.x / cell).floor() as i64 + (p.y / cell).floor() as i64 + (p.z / cell).floor() as i64;
            if parity.rem_euclid(2) == 1 {
                c.iter_mut().for_each(|v| *v *= 0.8);
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Parallelogram `origin + s·u + t·v`, `s, t ∈ [0, 1]`, with `u ⟂ v`.
    Quad { origin: Point3, u: Vector3<f64>, v: Vector3<f64> },
    Sphere { center: Point3, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    pub shape: Shape,
    pub texture: Texture,
}

impl Surface {
    /// Ray parameter of the nearest hit with `t > 1e-9`.
    pub fn intersect(&self, eye: &Point3, dir: &Vector3<f64>) -> Option<f64> {
        match self.shape {
            Shape::Quad { origin, u, v } => {
                let n = u.cross(&v);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(origin - eye)) / denom;
                if t <= 1e-9 {
                    return None;
                }
                let rel = eye + dir * t - origin;
                let s = rel.dot(&u) / u.norm_squared();
                let r = rel.dot(&v) / v.norm_squared();
                ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&r)).then_some(t)
            }
            Shape::Sphere { center, radius } => {
                let oc = eye - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > 1e-9)
            }
        }
    }

    pub fn contains_strictly(&self, p: &Point3) -> bool {
        match self.shape {
            Shape::Sphere { center, radius } => (p - center).norm() < radius - 1e-9,
            Shape::Quad { .. } => false,
        }
    }

    /// Roughly uniform samples at spacing `h`: a jittered grid on quads, a
    /// Fibonacci lattice on spheres.
    pub fn sample<R: Rng + ?Sized>(&self, h: f64, rng: &mut R) -> Vec<Point3> {
        match self.shape {
            Shape::Quad { origin, u, v } => {
                let (nu, nv) = ((u.norm() / h).ceil() as usize, (v.norm() / h).ceil() as usize);
                let mut out = Vec::with_capacity(nu * nv);
                for i in 0..nu {
                    for j in 0..nv {
                        let s = ((i as f64 + 0.5 + rng.random_range(-0.25..0.25)) / nu as f64).clamp(0.0, 1.0);
                        let t = ((j as f64 + 0.5 + rng.random_range(-0.25..0.25)) / nv as f64).clamp(0.0, 1.0);
                        out.push(origin + u * s + v * t);
                    }
                }
                out
            }
            Shape::Sphere { center, radius } => {
                let n = ((4.0 * std::f64::consts::PI * radius * radius) / (h * h)).ceil().max(1.0) as usize;
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                (0..n)
                    .map(|k| {
                        let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                        let r = (1.0 - z * z).sqrt();
                        let phi = golden * k as f64;
                        center + Vector3::new(r * phi.cos(), r * phi.sin(), z) * radius
                    })
                    .collect()
            }
        }
    }
}

/// Axis-aligned box without its bottom face.
pub fn open_box(min: Point3, size: Vector3<f64>, texture: Texture) -> Vec<Surface> {
    let (ex, ey, ez) = (Vector3::x() * size.x, Vector3::y() * size.y, Vector3::z() * size.z);
    let quad = |origin: Point3, u, v| Surface {
        shape: Shape::Quad { origin, u, v },
        texture,
    };
    vec![
        quad(min + ez, ex, ey),
        quad(min, ex, ez),
        quad(min + ey, ex, ez),
        quad(min, ey, ez),
        quad(min + ex, ey, ez),
    ]
}

#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
}

impl Scene {
    pub fn color_along(&self, eye: &Point3, dir: &Vector3<f64>) -> [f64; 3] {
        let mut best: Option<(f64, &Surface)> = None;
        for s in &self.surfaces {
            if let Some(t) = s.intersect(eye, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, s));
                }
            }
        }
        match best {
            Some((t, s)) => s.texture.color(&(eye + dir * t)),
            None => BACKGROUND,
        }
    }

    /// Samples every surface at spacing `h`, drops points buried inside a
    /// solid, keeps those passing `keep`, and adds isotropic Gaussian noise.
    pub fn sample_points<R: Rng + ?Sized>(&self, h: f64, noise: f64, rng: &mut R, keep: impl Fn(&Point3) -> bool) -> Vec<Point3> {
        let normal = Normal::new(0.0, noise.max(0.0)).expect("finite sigma");
        let mut out = Vec::new();
        for s in &self.surfaces {
            for p in s.sample(h, rng) {
                if !keep(&p) || self.surfaces.iter().any(|o| o.contains_strictly(&p)) {
                    continue;
                }
                let q = if noise > 0.0 {
                    p + Vector3::from_fn(|_, _| normal.sample(rng))
                } else {
                    p
                };
                out.push(q);
            }
        }
        out
    }

    /// Renders the view of a world-frame camera (`extrinsic` maps world to
    /// camera coordinates).
    pub fn render(&self, camera: &CameraModel) -> RgbImage {
        let k_inv = camera.intrinsic.try_inverse().expect("pinhole intrinsics are invertible");
        let r_t = camera.extrinsic.rotation.transpose();
        let eye = camera.center();
        RgbImage::from_fn(camera.width, camera.height, |x, y| {
            let ray_cam = k_inv * Vector3::new(x as f64 + 0.5, y as f64 + 0.5, 1.0);
            let c = self.color_along(&eye, &(r_t * ray_cam));
            c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        })
    }
}

/// World → camera transform of a camera at `eye` looking at `target`;
/// image x follows `forward × up`, image y points down.
pub fn look_at(eye: &Point3, target: &Point3, up: &Vector3<f64>) -> RigidTransform {
    let z = (target - eye).normalize();
    let x = z.cross(up).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    RigidTransform::new(r, -(r * eye.coords)).expect("orthonormal by construction")
}
