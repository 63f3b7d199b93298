//! Synthetic benchmark scenes with exact poses: clouds cropped from a
//! textured world, each in its own frame, plus ray-cast RGB views.
//!
//! * `textured_plane`: one flat textured ground plane; geometry alone cannot
//!   tell one part of the overlap from another.
//! * `symmetric_pair`: two identical spheres with different textures on a
//!   textured ground.
//! * `cluttered`: ground with randomly placed boxes and spheres.
//! * `mixed_planarity`: geometry-only pairs, four plane pairs followed by
//!   six sphere-shell pairs, for exercising the subset extractor.

pub mod scene;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point3, RigidTransform};
use crate::io::cloud::{save_cloud, PointCloud};
use crate::io::manifest::{save_manifest, CloudEntry, DatasetManifest, ImageEntry, PairEntry};
use crate::io::ppm::{save_ppm, RgbImage};
use crate::sampling::SpatialGrid;
use scene::{look_at, open_box, Scene, Shape, Surface, Texture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    TexturedPlane,
    SymmetricPair,
    Cluttered,
    MixedPlanarity,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [Self::TexturedPlane, Self::SymmetricPair, Self::Cluttered, Self::MixedPlanarity];

    pub fn name(self) -> &'static str {
        match self {
            Self::TexturedPlane => "textured_plane",
            Self::SymmetricPair => "symmetric_pair",
            Self::Cluttered => "cluttered",
            Self::MixedPlanarity => "mixed_planarity",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scene kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    /// Number of pairs; ignored by `mixed_planarity`, which always has ten.
    pub pairs: usize,
    pub seed: u64,
    /// Surface sampling spacing in meters.
    pub spacing: f64,
    /// Gaussian point noise σ in meters.
    pub noise: f64,
    /// Radius of the disc each cloud is cropped to.
    pub crop_radius: f64,
    pub cameras_per_cloud: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            pairs: 20,
            seed: 0,
            spacing: 0.02,
            noise: 0.0,
            crop_radius: 1.0,
            cameras_per_cloud: 5,
            width: 320,
            height: 240,
            focal: 260.0,
        }
    }
}

/// Generated files held in memory until [`SyntheticDataset::write`].
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub clouds: BTreeMap<String, PointCloud>,
    pub images: BTreeMap<PathBuf, RgbImage>,
}

impl SyntheticDataset {
    /// Writes clouds, images and `manifest.json` below `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        for sub in ["clouds", "images"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for (id, cloud) in &self.clouds {
            save_cloud(dir.join(&self.manifest.clouds[id].path), cloud)?;
        }
        for (rel, img) in &self.images {
            save_ppm(dir.join(rel), img)?;
        }
        let mut manifest = self.manifest.clone();
        manifest.base_dir = dir.to_path_buf();
        let path = dir.join("manifest.json");
        save_manifest(&path, &manifest)?;
        Ok(path)
    }
}

struct GeneratedPair {
    p: Vec<Point3>,
    q: Vec<Point3>,
    gt: RigidTransform,
    cams_p: Vec<(CameraModel, RgbImage)>,
    cams_q: Vec<(CameraModel, RgbImage)>,
}

fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(index as u64))
}

fn ground(texture: Texture) -> Surface {
    Surface {
        shape: Shape::Quad {
            origin: Point3::new(-4.0, -4.0, 0.0),
            u: Vector3::x() * 8.0,
            v: Vector3::y() * 8.0,
        },
        texture,
    }
}

fn sphere(center: Point3, radius: f64, texture: Texture) -> Surface {
    Surface {
        shape: Shape::Sphere { center, radius },
        texture,
    }
}

fn ground_scene(kind: SceneKind, rng: &mut ChaCha8Rng) -> Scene {
    let mut surfaces = vec![ground(Texture::noise(rng.random()))];
    match kind {
        SceneKind::SymmetricPair => {
            surfaces.push(sphere(Point3::new(-0.55, 0.0, 0.3), 0.3, Texture::noise(rng.random())));
            surfaces.push(sphere(Point3::new(0.55, 0.0, 0.3), 0.3, Texture::noise(rng.random())));
        }
        SceneKind::Cluttered => {
            for _ in 0..rng.random_range(4..=6) {
                let c = Point3::new(rng.random_range(-1.1..1.1), rng.random_range(-1.1..1.1), 0.0);
                let texture = Texture::noise(rng.random());
                if rng.random_bool(0.5) {
                    let r = rng.random_range(0.1..0.25);
                    surfaces.push(sphere(c + Vector3::z() * r, r, texture));
                } else {
                    let size = Vector3::new(rng.random_range(0.2..0.5), rng.random_range(0.2..0.5), rng.random_range(0.15..0.6));
                    surfaces.extend(open_box(c - Vector3::new(size.x / 2.0, size.y / 2.0, 0.0), size, texture));
                }
            }
        }
        _ => {}
    }
    Scene { surfaces }
}

/// Cloud frame → world: yaw about z, a small tilt, origin at `center`.
fn random_frame(rng: &mut ChaCha8Rng, center: Point3) -> RigidTransform {
    let yaw = RigidTransform::rotation_z(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI), Vector3::zeros());
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
    let tilt = RigidTransform::from_axis_angle(axis + Vector3::x() * 1e-3, rng.random_range(0.0..10f64.to_radians()), Vector3::zeros());
    let mut t = yaw.compose(&tilt);
    t.translation = center.coords;
    t
}

/// World-frame cameras hovering over a disc: one above the center, the
/// rest on a ring, all looking slightly outward and down.
fn cameras_over(rng: &mut ChaCha8Rng, center: Point3, radius: f64, params: &GeneratorParams) -> Vec<CameraModel> {
    let k = CameraModel::pinhole(params.focal, params.focal, params.width as f64 / 2.0, params.height as f64 / 2.0);
    (0..params.cameras_per_cloud)
        .map(|i| {
            let (offset, outward) = if i == 0 {
                (Vector3::zeros(), Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0))
            } else {
                let a = std::f64::consts::TAU * (i - 1) as f64 / (params.cameras_per_cloud - 1) as f64 + rng.random_range(-0.2..0.2);
                let dir = Vector3::new(a.cos(), a.sin(), 0.0);
                (dir * 0.55 * radius, dir * 0.3)
            };
            let eye = center + offset + Vector3::z() * rng.random_range(1.4..1.8) * radius;
            let target = Point3::new(eye.x, eye.y, 0.0) + outward;
            let heading = std::f64::consts::FRAC_PI_2 + rng.random_range(-0.25..0.25);
            let up = Vector3::new(heading.cos(), heading.sin(), 0.0);
            CameraModel::new(k, look_at(&eye, &target, &up), params.width, params.height).expect("valid pinhole")
        })
        .collect()
}

fn crop(points: &[Point3], center: &Point3, radius: f64) -> Vec<Point3> {
    points
        .iter()
        .filter(|p| (p.x - center.x).hypot(p.y - center.y) <= radius)
        .copied()
        .collect()
}

fn ground_pair(kind: SceneKind, params: &GeneratorParams, index: usize) -> GeneratedPair {
    let mut rng = pair_rng(params.seed, index);
    let scene = ground_scene(kind, &mut rng);
    let radius = params.crop_radius;
    let all = scene.sample_points(params.spacing, params.noise, &mut rng, |p| p.x.hypot(p.y) <= 2.0 * radius + 1.0);
    let (sep, crop_r) = match kind {
        SceneKind::SymmetricPair => (rng.random_range(0.2..0.4) * radius, 1.5 * radius),
        _ => (rng.random_range(0.5..0.8) * radius, radius),
    };
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = Vector3::new(theta.cos(), theta.sin(), 0.0);
    let (cp, cq) = (Point3::origin() - dir * sep / 2.0, Point3::origin() + dir * sep / 2.0);
    let (tp, tq) = (random_frame(&mut rng, cp), random_frame(&mut rng, cq));
    let views = |rng: &mut ChaCha8Rng, c: Point3, frame: &RigidTransform| -> Vec<(CameraModel, RgbImage)> {
        cameras_over(rng, c, crop_r, params)
            .into_iter()
            .map(|cam| {
                let img = scene.render(&cam);
                let local = CameraModel::new(cam.intrinsic, cam.extrinsic.compose(frame), cam.width, cam.height).expect("valid pinhole");
                (local, img)
            })
            .collect()
    };
    let cams_p = views(&mut rng, cp, &tp);
    let cams_q = views(&mut rng, cq, &tq);
    let to_local = |pts: Vec<Point3>, t: &RigidTransform| {
        let inv = t.inverse();
        pts.iter().map(|p| inv.apply(p)).collect::<Vec<_>>()
    };
    GeneratedPair {
        p: to_local(crop(&all, &cp, crop_r), &tp),
        q: to_local(crop(&all, &cq, crop_r), &tq),
        gt: tq.inverse().compose(&tp),
        cams_p,
        cams_q,
    }
}

fn mixed_pair(params: &GeneratorParams, index: usize) -> GeneratedPair {
    let mut rng = pair_rng(params.seed, index);
    let h = params.spacing * 1.5;
    let (p, q) = if index < 4 {
        let plane = ground(Texture::uniform_gray());
        let all = Scene { surfaces: vec![plane] }.sample_points(h, params.noise, &mut rng, |p| p.x.hypot(p.y) <= 1.5);
        (crop(&all, &Point3::new(-0.3, 0.0, 0.0), 1.0), crop(&all, &Point3::new(0.3, 0.0, 0.0), 1.0))
    } else {
        let shell = sphere(Point3::origin(), 0.5, Texture::uniform_gray());
        let all = Scene { surfaces: vec![shell] }.sample_points(h, params.noise, &mut rng, |_| true);
        let split = |keep: fn(&Point3) -> bool| all.iter().filter(|p| keep(p)).copied().collect::<Vec<_>>();
        (split(|p| p.x < 0.3), split(|p| p.x > -0.3))
    };
    let tp = random_frame(&mut rng, Point3::origin());
    let tq = RigidTransform::random(&mut rng, 1.0);
    let (ip, iq) = (tp.inverse(), tq.inverse());
    GeneratedPair {
        p: p.iter().map(|x| ip.apply(x)).collect(),
        q: q.iter().map(|x| iq.apply(x)).collect(),
        gt: iq.compose(&tp),
        cams_p: Vec::new(),
        cams_q: Vec::new(),
    }
}

/// Fraction of `P` points with a `Q` point within 0.05 m under `gt`.
fn overlap_fraction(p: &[Point3], q: &[Point3], gt: &RigidTransform) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let grid = SpatialGrid::new(q, 0.05);
    let hits = p.iter().filter(|x| grid.has_neighbor_within(&gt.apply(x), 0.05)).count();
    hits as f64 / p.len() as f64
}

/// Builds a dataset in memory. Identical parameters give identical bytes.
pub fn generate(kind: SceneKind, params: &GeneratorParams) -> Result<SyntheticDataset> {
    if !(params.spacing > 0.0 && params.crop_radius > 0.0 && params.focal > 0.0 && params.noise >= 0.0) {
        return Err(Error::InvalidArgument("spacing, crop_radius and focal must be positive, noise non-negative".into()));
    }
    if params.width == 0 || params.height == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let count = if kind == SceneKind::MixedPlanarity { 10 } else { params.pairs };
    let generated: Vec<GeneratedPair> = (0..count)
        .into_par_iter()
        .map(|i| match kind {
            SceneKind::MixedPlanarity => mixed_pair(params, i),
            _ => ground_pair(kind, params, i),
        })
        .collect();

    let mut manifest = DatasetManifest::default();
    let mut clouds = BTreeMap::new();
    let mut images = BTreeMap::new();
    for (i, g) in generated.into_iter().enumerate() {
        let ids = [format!("{}_{i:03}_a", kind.name()), format!("{}_{i:03}_b", kind.name())];
        for (id, pts, cams) in [(&ids[0], &g.p, g.cams_p), (&ids[1], &g.q, g.cams_q)] {
            let mut entries = Vec::new();
            for (k, (cam, img)) in cams.into_iter().enumerate() {
                let rel = PathBuf::from(format!("images/{id}_{k}.ppm"));
                entries.push(ImageEntry {
                    path: rel.clone(),
                    width: cam.width,
                    height: cam.height,
                    intrinsic: cam.intrinsic,
                    extrinsic: cam.extrinsic,
                    feature_raster: None,
                });
                images.insert(rel, img);
            }
            manifest.clouds.insert(
                id.clone(),
                CloudEntry {
                    path: PathBuf::from(format!("clouds/{id}.ply")),
                    images: entries,
                },
            );
            clouds.insert(id.clone(), PointCloud::from_points(pts.clone()));
        }
        let overlap = (overlap_fraction(&g.p, &g.q, &g.gt) * 1e6).round() / 1e6;
        manifest.pairs.push(PairEntry {
            id_p: ids[0].clone(),
            id_q: ids[1].clone(),
            gt: g.gt,
            overlap_ratio: Some(overlap),
            planarity: None,
        });
    }
    Ok(SyntheticDataset { manifest, clouds, images })
}
