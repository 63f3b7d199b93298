//! Planarity scoring of registered pairs and extraction of ambiguous subsets.
//!
//! The overlap `O` of a pair is the set of GT-aligned points of `P` with a
//! neighbor in `Q`. A single RANSAC plane is fitted to `O`; the score
//! `r = Zᵒ / Z` is the fraction of overlap points closer than `τ1` to it, and
//! a pair is planar when `r > τ2`.

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::io::cloud::load_cloud;
use crate::io::manifest::{DatasetManifest, PlanarityBlock, PlaneRecord};
use crate::sampling::SpatialGrid;

pub const TAU2_DEFAULT: f64 = 0.7;
/// Stricter threshold used for the large-scale indoor set.
pub const TAU2_INDOOR_LRS: f64 = 0.8;

/// Plane `normal · x = offset`, unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Point3) -> f64 {
        (self.normal.dot(&p.coords) - self.offset).abs()
    }

    fn through(a: &Point3, b: &Point3, c: &Point3) -> Option<Self> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        let scale = (b - a).norm().max((c - a).norm());
        if !(len > 1e-12 * scale * scale) {
            return None;
        }
        Some(Self::oriented(n / len, a))
    }

    fn oriented(mut normal: Vector3<f64>, on: &Point3) -> Self {
        let key = [normal.z, normal.y, normal.x].into_iter().find(|v| v.abs() > 1e-12).unwrap_or(0.0);
        if key < 0.0 {
            normal = -normal;
        }
        Self {
            normal,
            offset: normal.dot(&on.coords),
        }
    }

    pub fn to_record(&self) -> PlaneRecord {
        PlaneRecord {
            normal: [self.normal.x, self.normal.y, self.normal.z],
            offset: self.offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub plane: Plane,
    /// Points with distance `< τ1` to `plane`.
    pub inlier_count: usize,
    /// Inlier count of the best 3-point hypothesis before the refit.
    pub hypothesis_inliers: usize,
}

fn count_within(plane: &Plane, points: &[Point3], tau1: f64) -> usize {
    points.iter().filter(|p| plane.distance(p) < tau1).count()
}

fn least_squares_plane(points: &[Point3]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / points.len() as f64;
    let cov = points.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p.coords - mean;
        a + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let normal = eig.eigenvectors.column(k).into_owned();
    Some(Plane::oriented(normal.normalize(), &Point3::from(mean)))
}

/// Seeded RANSAC single-plane fit. When `iters` covers every point triple
/// the triples are enumerated instead of sampled. The best hypothesis is
/// refit by least squares on its inliers; the refit is kept only if it does
/// not lose inliers.
pub fn ransac_plane(points: &[Point3], tau1: f64, iters: usize, seed: u64) -> Result<PlaneFit> {
    if !(tau1 > 0.0) {
        return Err(Error::InvalidArgument("tau1 must be positive".into()));
    }
    if points.len() < 3 {
        return Err(Error::DegenerateInput("plane fit needs at least 3 points"));
    }
    let n = points.len();
    let mut best: Option<(Plane, usize)> = None;
    let mut consider = |i: usize, j: usize, k: usize| {
        if let Some(plane) = Plane::through(&points[i], &points[j], &points[k]) {
            let c = count_within(&plane, points, tau1);
            if best.map_or(true, |b| c > b.1) {
                best = Some((plane, c));
            }
        }
    };
    let triples = n as u128 * (n as u128 - 1) * (n as u128 - 2) / 6;
    if triples <= iters as u128 {
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    consider(i, j, k);
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..iters {
            let t = sample(&mut rng, n, 3);
            consider(t.index(0), t.index(1), t.index(2));
        }
    }
    let (plane, hypothesis_inliers) = best.ok_or(Error::DegenerateInput("all sampled point triples are collinear"))?;
    let inliers: Vec<Point3> = points.iter().filter(|p| plane.distance(p) < tau1).copied().collect();
    let (plane, inlier_count) = match least_squares_plane(&inliers) {
        Some(refit) => {
            let c = count_within(&refit, points, tau1);
            if c >= hypothesis_inliers {
                (refit, c)
            } else {
                (plane, hypothesis_inliers)
            }
        }
        None => (plane, hypothesis_inliers),
    };
    Ok(PlaneFit {
        plane,
        inlier_count,
        hypothesis_inliers,
    })
}

/// GT-aligned points of `p` with a `q` neighbor closer than `nn_radius`.
/// In symmetric mode the `q` points with an aligned-`p` neighbor are appended.
pub fn overlap_region(p: &[Point3], q: &[Point3], gt: &RigidTransform, nn_radius: f64, symmetric: bool) -> Result<Vec<Point3>> {
    if !(nn_radius > 0.0) {
        return Err(Error::InvalidArgument("nn_radius must be positive".into()));
    }
    let aligned: Vec<Point3> = p.iter().map(|x| gt.apply(x)).collect();
    let q_grid = SpatialGrid::new(q, nn_radius);
    let mut out: Vec<Point3> = aligned.iter().filter(|x| q_grid.has_neighbor_within(x, nn_radius)).copied().collect();
    if symmetric {
        let p_grid = SpatialGrid::new(&aligned, nn_radius);
        out.extend(q.iter().filter(|y| p_grid.has_neighbor_within(y, nn_radius)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanarityConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub nn_radius: f64,
    pub ransac_iters: usize,
    pub seed: u64,
    pub symmetric_overlap: bool,
}

impl Default for PlanarityConfig {
    fn default() -> Self {
        Self {
            tau1: 0.05,
            tau2: TAU2_DEFAULT,
            nn_radius: 0.10,
            ransac_iters: 1000,
            seed: 0,
            symmetric_overlap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneAmbiguityReport {
    pub overlap_size: usize,
    pub plane_inliers: usize,
    /// `None` when the overlap is empty or too degenerate to fit a plane.
    pub score: Option<f64>,
    pub plane: Option<Plane>,
    pub is_planar: bool,
    pub tau1: f64,
    pub tau2: f64,
}

impl PlaneAmbiguityReport {
    pub fn to_block(&self) -> PlanarityBlock {
        PlanarityBlock {
            r: self.score,
            tau1: self.tau1,
            tau2: self.tau2,
            overlap_size: self.overlap_size,
            plane_inliers: self.plane_inliers,
            is_planar: self.is_planar,
            plane: self.plane.map(|p| p.to_record()),
        }
    }
}

pub fn planarity_score(p: &[Point3], q: &[Point3], gt: &RigidTransform, cfg: &PlanarityConfig) -> Result<PlaneAmbiguityReport> {
    let overlap = overlap_region(p, q, gt, cfg.nn_radius, cfg.symmetric_overlap)?;
    let mut report = PlaneAmbiguityReport {
        overlap_size: overlap.len(),
        plane_inliers: 0,
        score: None,
        plane: None,
        is_planar: false,
        tau1: cfg.tau1,
        tau2: cfg.tau2,
    };
    match ransac_plane(&overlap, cfg.tau1, cfg.ransac_iters, cfg.seed) {
        Ok(fit) => {
            let r = fit.inlier_count as f64 / overlap.len() as f64;
            report.plane_inliers = fit.inlier_count;
            report.score = Some(r);
            report.plane = Some(fit.plane);
            report.is_planar = r > cfg.tau2;
        }
        Err(Error::DegenerateInput(_)) => {
            warn!("overlap of {} points is too small or degenerate for a plane fit", overlap.len());
        }
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Scores every pair of `manifest` and returns the planar pairs (with their
/// planarity blocks attached) plus one report per input pair.
pub fn extract_subset(manifest: &DatasetManifest, cfg: &PlanarityConfig) -> Result<(DatasetManifest, Vec<PlaneAmbiguityReport>)> {
    let mut ids: Vec<&str> = manifest.pairs.iter().flat_map(|p| [p.id_p.as_str(), p.id_q.as_str()]).collect();
    ids.sort_unstable();
    ids.dedup();
    let clouds: std::collections::BTreeMap<&str, Vec<Point3>> = ids
        .par_iter()
        .map(|id| {
            let entry = manifest.cloud(id)?;
            Ok((*id, load_cloud(manifest.resolve(&entry.path))?.points))
        })
        .collect::<Result<_>>()?;
    let reports: Vec<PlaneAmbiguityReport> = manifest
        .pairs
        .par_iter()
        .map(|pair| planarity_score(&clouds[pair.id_p.as_str()], &clouds[pair.id_q.as_str()], &pair.gt, cfg))
        .collect::<Result<_>>()?;
    let mut subset = manifest.clone();
    subset.pairs = manifest
        .pairs
        .iter()
        .zip(&reports)
        .filter(|(_, r)| r.is_planar)
        .map(|(pair, r)| {
            let mut pair = pair.clone();
            pair.planarity = Some(r.to_block());
            pair
        })
        .collect();
    let used: std::collections::BTreeSet<&str> = subset.pairs.iter().flat_map(|p| [p.id_p.as_str(), p.id_q.as_str()]).collect();
    subset.clouds.retain(|id, _| used.contains(id.as_str()));
    if subset.pairs.is_empty() {
        warn!("no planar pairs at tau2 = {}", cfg.tau2);
    }
    Ok((subset, reports))
}
