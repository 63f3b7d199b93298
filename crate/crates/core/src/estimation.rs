//! Rigid transform estimation from fine correspondences.
//!
//! [`lgr`] solves one weighted Kabsch per correspondence group, keeps the
//! candidate with the most global inliers and refines it on its inlier set.
//! [`ransac_registration`] is the classic hypothesize-and-verify baseline.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{kabsch, Point3, RigidTransform};
use crate::matching::FineMatches;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    /// Inlier acceptance radius Δ in meters.
    pub acceptance_radius: f64,
    pub refine_iters: usize,
    pub ransac_iters: usize,
    pub ransac_sample: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            acceptance_radius: 0.10,
            refine_iters: 5,
            ransac_iters: 5000,
            ransac_sample: 3,
        }
    }
}

impl EstimationConfig {
    fn validate(&self) -> Result<()> {
        if !(self.acceptance_radius > 0.0) {
            return Err(Error::InvalidArgument("acceptance radius must be positive".into()));
        }
        if self.refine_iters == 0 {
            return Err(Error::InvalidArgument("refine_iters must be at least 1".into()));
        }
        if self.ransac_sample < 3 {
            return Err(Error::InvalidArgument("ransac_sample must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    /// Indices into the flattened correspondence list with residual `< Δ`.
    pub inlier_indices: Vec<usize>,
    pub candidate_count: usize,
    pub converged: bool,
    /// Inlier count of the selected candidate, then after each accepted round.
    pub inlier_history: Vec<usize>,
}

fn inliers(t: &RigidTransform, src: &[Point3], dst: &[Point3], radius: f64) -> Vec<usize> {
    (0..src.len())
        .filter(|&i| (t.apply(&src[i]) - dst[i]).norm() < radius)
        .collect()
}

fn gather(idx: &[usize], src: &[Point3], dst: &[Point3], w: &[f64]) -> (Vec<Point3>, Vec<Point3>, Vec<f64>) {
    (
        idx.iter().map(|&i| src[i]).collect(),
        idx.iter().map(|&i| dst[i]).collect(),
        idx.iter().map(|&i| w[i]).collect(),
    )
}

/// Repeated weighted Kabsch on the inlier set. Stops at a fixed point, when
/// a round would lose inliers, or when the inliers become degenerate.
fn refine(
    start: RigidTransform,
    src: &[Point3],
    dst: &[Point3],
    weights: &[f64],
    cfg: &EstimationConfig,
) -> (RigidTransform, Vec<usize>, bool, Vec<usize>) {
    let mut t = start;
    let mut current = inliers(&t, src, dst, cfg.acceptance_radius);
    let mut history = vec![current.len()];
    let mut converged = false;
    for _ in 0..cfg.refine_iters {
        let (s, d, w) = gather(&current, src, dst, weights);
        let Ok(next) = kabsch(&s, &d, &w) else { break };
        let next_inliers = inliers(&next, src, dst, cfg.acceptance_radius);
        if next_inliers.len() < current.len() {
            break;
        }
        let fixed = next_inliers == current;
        t = next;
        current = next_inliers;
        history.push(current.len());
        if fixed {
            converged = true;
            break;
        }
    }
    (t, current, converged, history)
}

/// Local-to-global registration over the groups of `fine`, whose indices
/// refer to `dense_p` and `dense_q`.
pub fn lgr(fine: &FineMatches, dense_p: &[Point3], dense_q: &[Point3], cfg: &EstimationConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let flat = fine.flatten();
    for m in &flat {
        if m.p >= dense_p.len() || m.q >= dense_q.len() {
            return Err(Error::InvalidArgument(format!(
                "correspondence ({}, {}) out of range",
                m.p, m.q
            )));
        }
    }
    let src: Vec<Point3> = flat.iter().map(|m| dense_p[m.p]).collect();
    let dst: Vec<Point3> = flat.iter().map(|m| dense_q[m.q]).collect();
    let weights: Vec<f64> = flat.iter().map(|m| m.confidence).collect();

    let candidates: Vec<Option<(RigidTransform, usize)>> = fine
        .groups
        .par_iter()
        .map(|g| {
            if g.len() < 3 {
                return None;
            }
            let s: Vec<Point3> = g.iter().map(|m| dense_p[m.p]).collect();
            let d: Vec<Point3> = g.iter().map(|m| dense_q[m.q]).collect();
            let w: Vec<f64> = g.iter().map(|m| m.confidence).collect();
            let t = kabsch(&s, &d, &w).ok()?;
            let count = src
                .iter()
                .zip(&dst)
                .filter(|(p, q)| (t.apply(p) - **q).norm() < cfg.acceptance_radius)
                .count();
            Some((t, count))
        })
        .collect();
    let candidate_count = candidates.iter().flatten().count();
    let mut best: Option<&(RigidTransform, usize)> = None;
    for c in candidates.iter().flatten() {
        if best.map_or(true, |b| c.1 > b.1) {
            best = Some(c);
        }
    }
    let (start, _) = best.ok_or(Error::NoValidCandidate)?;
    let (transform, inlier_indices, converged, inlier_history) = refine(*start, &src, &dst, &weights, cfg);
    Ok(RegistrationResult {
        transform,
        inlier_indices,
        candidate_count,
        converged,
        inlier_history,
    })
}

/// Seeded RANSAC over `(src[i], dst[i])` pairs with unit weights.
pub fn ransac_registration(src: &[Point3], dst: &[Point3], cfg: &EstimationConfig, seed: u64) -> Result<RegistrationResult> {
    cfg.validate()?;
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            what: "ransac destination points",
            expected: src.len(),
            got: dst.len(),
        });
    }
    if src.len() < cfg.ransac_sample {
        return Err(Error::NoValidCandidate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ones = vec![1.0; cfg.ransac_sample];
    let mut best: Option<(RigidTransform, usize)> = None;
    let mut candidate_count = 0;
    for _ in 0..cfg.ransac_iters {
        let idx = sample(&mut rng, src.len(), cfg.ransac_sample).into_vec();
        let s: Vec<Point3> = idx.iter().map(|&i| src[i]).collect();
        let d: Vec<Point3> = idx.iter().map(|&i| dst[i]).collect();
        let Ok(t) = kabsch(&s, &d, &ones) else { continue };
        candidate_count += 1;
        let count = inliers(&t, src, dst, cfg.acceptance_radius).len();
        if best.as_ref().map_or(true, |b| count > b.1) {
            best = Some((t, count));
        }
    }
    let (start, _) = best.ok_or(Error::NoValidCandidate)?;
    let weights = vec![1.0; src.len()];
    let (transform, inlier_indices, converged, inlier_history) = refine(start, src, dst, &weights, cfg);
    Ok(RegistrationResult {
        transform,
        inlier_indices,
        candidate_count,
        converged,
        inlier_history,
    })
}
