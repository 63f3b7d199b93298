//! Registration metrics: IR, FMR, RMSE, RR, RE/TE, ECDF and threshold sweeps.
//!
//! Boundary comparisons are strict: a correspondence is an inlier when its
//! residual is `< Δ_r`, a pair counts for FMR when its IR is `> τ`, and a
//! pair is registered when its RMSE is `< 0.2 m`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::sampling::SpatialGrid;

pub const IR_SAMPLE_SIZE: usize = 5000;

/// A correspondence `(p in P, q in Q)`.
pub type Correspondence = (Point3, Point3);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricThresholds {
    pub ir_radius: f64,
    pub fmr_min_ir: f64,
    pub rr_rmse: f64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self {
            ir_radius: 0.10,
            fmr_min_ir: 0.05,
            rr_rmse: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub pair_id: String,
    pub inlier_ratio: f64,
    pub rmse: f64,
    pub re_deg: f64,
    pub te_m: f64,
    pub registered: bool,
    pub sampled_count: usize,
}

fn residual(gt: &RigidTransform, c: &Correspondence) -> f64 {
    (gt.apply(&c.0) - c.1).norm()
}

/// Fraction of correspondences with `‖T* p − q‖ < radius`. With `sample`
/// below the population size, a seeded uniform subset without replacement
/// is scored. Returns `(ratio, scored_count)`; empty input scores 0.
pub fn inlier_ratio(corr: &[Correspondence], gt: &RigidTransform, radius: f64, sample_size: Option<usize>, seed: u64) -> Result<(f64, usize)> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("inlier radius must be positive".into()));
    }
    if corr.is_empty() {
        return Ok((0.0, 0));
    }
    let hits = |it: &mut dyn Iterator<Item = &Correspondence>| it.filter(|c| residual(gt, c) < radius).count();
    match sample_size {
        Some(k) if k < corr.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = sample(&mut rng, corr.len(), k);
            let n = hits(&mut idx.iter().map(|i| &corr[i]));
            Ok((n as f64 / k as f64, k))
        }
        _ => Ok((hits(&mut corr.iter()) as f64 / corr.len() as f64, corr.len())),
    }
}

/// Fraction of pairs whose IR exceeds `tau`.
pub fn feature_match_recall(irs: &[f64], tau: f64) -> Result<f64> {
    if irs.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(irs.iter().filter(|&&ir| ir > tau).count() as f64 / irs.len() as f64)
}

/// Root mean squared residual of `est` over ground-truth correspondences.
pub fn rmse(gt_corr: &[Correspondence], est: &RigidTransform) -> Result<f64> {
    if gt_corr.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let sum: f64 = gt_corr.iter().map(|c| (est.apply(&c.0) - c.1).norm_squared()).sum();
    Ok((sum / gt_corr.len() as f64).sqrt())
}

/// Pairs `(p, q)` where `q` is the nearest point of `q_points` to `T* p`,
/// closer than `radius`.
pub fn ground_truth_correspondences(p_points: &[Point3], q_points: &[Point3], gt: &RigidTransform, radius: f64) -> Vec<Correspondence> {
    let grid = SpatialGrid::new(q_points, radius);
    p_points
        .iter()
        .filter_map(|p| grid.nearest_within(&gt.apply(p), radius).map(|(j, _)| (*p, q_points[j])))
        .collect()
}

/// Fraction of pairs with RMSE strictly below `accept`.
pub fn registration_recall(rmses: &[f64], accept: f64) -> Result<f64> {
    if rmses.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(rmses.iter().filter(|&&r| r < accept).count() as f64 / rmses.len() as f64)
}

/// `(threshold, fraction of values ≤ threshold)` for each grid point.
pub fn ecdf(values: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(grid
        .iter()
        .map(|&t| (t, sorted.partition_point(|&v| v <= t) as f64 / sorted.len() as f64))
        .collect())
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// What one registered pair contributes to a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepInput {
    pub correspondences: Vec<Correspondence>,
    pub gt: RigidTransform,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub ir_radii: Vec<f64>,
    pub min_irs: Vec<f64>,
    pub rmse_thresholds: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            ir_radii: linspace(0.025, 0.25, 10),
            min_irs: linspace(0.0, 0.2, 21),
            rmse_thresholds: linspace(0.025, 0.5, 20),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub metric: String,
    pub threshold: f64,
    pub value: f64,
}

pub const FMR_VS_INLIER_RADIUS: &str = "fmr_vs_inlier_radius";
pub const FMR_VS_MIN_IR: &str = "fmr_vs_min_ir";
pub const RR_VS_RMSE: &str = "rr_vs_rmse";

/// FMR against the inlier radius (at the fixed `τ`), FMR against `τ` (at the
/// fixed radius) and RR against the RMSE threshold.
pub fn threshold_sweep(inputs: &[SweepInput], grid: &SweepGrid, fixed: &MetricThresholds, sample_size: Option<usize>, seed: u64) -> Result<Vec<SweepRow>> {
    if inputs.is_empty() {
        return Err(Error::EmptyList);
    }
    let irs_at = |radius: f64| -> Result<Vec<f64>> {
        inputs
            .iter()
            .map(|s| inlier_ratio(&s.correspondences, &s.gt, radius, sample_size, seed).map(|r| r.0))
            .collect()
    };
    let mut rows = Vec::new();
    for &r in &grid.ir_radii {
        rows.push(SweepRow {
            metric: FMR_VS_INLIER_RADIUS.into(),
            threshold: r,
            value: feature_match_recall(&irs_at(r)?, fixed.fmr_min_ir)?,
        });
    }
    let irs = irs_at(fixed.ir_radius)?;
    for &t in &grid.min_irs {
        rows.push(SweepRow {
            metric: FMR_VS_MIN_IR.into(),
            threshold: t,
            value: feature_match_recall(&irs, t)?,
        });
    }
    let rmses: Vec<f64> = inputs.iter().map(|s| s.rmse).collect();
    for &t in &grid.rmse_thresholds {
        rows.push(SweepRow {
            metric: RR_VS_RMSE.into(),
            threshold: t,
            value: registration_recall(&rmses, t)?,
        });
    }
    Ok(rows)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn metrics_csv(evals: &[PairEvaluation]) -> String {
    let mut out = String::from("pair_id,ir,rmse,re_deg,te_m,registered\n");
    for e in evals {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&e.pair_id),
            e.inlier_ratio,
            e.rmse,
            e.re_deg,
            e.te_m,
            e.registered
        );
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("metric,threshold,value\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", csv_field(&r.metric), r.threshold, r.value);
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
