//! End-to-end registration of manifest pairs: hierarchy, features, two-stage
//! fusion, coarse-to-fine matching, LGR, evaluation.

use std::collections::BTreeMap;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PipelineConfig, PixelProvider};
use crate::error::{Error, Result};
use crate::estimation::lgr;
use crate::features::{
    extract_patch, patch_descriptor, pixelwise_features, point_descriptor, stage1_pyramid, fuse_stage2, FeatureMatrix,
    FeatureRole, FusionMap, PosedImage,
};
use crate::geometry::{rotation_error, translation_error, Point3, RigidTransform};
use crate::io::cloud::load_cloud;
use crate::io::manifest::{DatasetManifest, ImageEntry};
use crate::io::ppm::load_ppm;
use crate::io::raster::load_raster;
use crate::matching::{match_pair, CoarseMatches};
use crate::metrics::{ground_truth_correspondences, inlier_ratio, rmse, Correspondence, PairEvaluation};
use crate::sampling::{build_hierarchy, patch_overlap_ratio, point_to_node_group, HierarchicalCloud, SuperpointPatch};

/// Points and selected views of one cloud.
#[derive(Debug, Clone)]
pub struct CloudInput {
    pub points: Vec<Point3>,
    pub images: Vec<PosedImage>,
}

/// Image entries ordered by camera distance to the cloud frame origin,
/// ties by index.
fn proximity_order(entries: &[ImageEntry]) -> Result<Vec<usize>> {
    let dist = entries
        .iter()
        .map(|e| Ok(e.camera()?.center().coords.norm()))
        .collect::<Result<Vec<f64>>>()?;
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    Ok(idx)
}

/// Loads a cloud and its `images_per_cloud` closest views.
pub fn load_cloud_input(manifest: &DatasetManifest, id: &str, cfg: &PipelineConfig) -> Result<CloudInput> {
    let entry = manifest.cloud(id)?;
    let points = load_cloud(manifest.resolve(&entry.path))?.points;
    let wanted = if cfg.features.use_pixel2d || cfg.features.use_patch2d {
        cfg.features.images_per_cloud
    } else {
        0
    };
    let mut order = proximity_order(&entry.images)?;
    order.truncate(wanted);
    order.sort_unstable();
    let images = order
        .into_iter()
        .map(|k| {
            let e = &entry.images[k];
            let pixels = load_ppm(manifest.resolve(&e.path))?;
            let raster = match (&e.feature_raster, cfg.features.provider) {
                (Some(r), PixelProvider::Auto) => Some(load_raster(manifest.resolve(r))?),
                _ => None,
            };
            PosedImage::new(pixels, e.camera()?, raster)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CloudInput { points, images })
}

/// Everything matching needs from one cloud.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    pub hierarchy: HierarchicalCloud,
    /// Dense points grouped around each superpoint.
    pub patches: Vec<SuperpointPatch>,
    /// Stage-1 features on the dense level.
    pub dense_features: FeatureMatrix,
    /// Stage-2 features on the superpoint level.
    pub fused: FeatureMatrix,
    pub patch_features: FeatureMatrix,
}

impl PreparedCloud {
    pub const DENSE_LEVEL: usize = 1;

    pub fn dense_points(&self) -> &[Point3] {
        self.hierarchy.points(Self::DENSE_LEVEL)
    }

    pub fn superpoints(&self) -> &[Point3] {
        self.hierarchy.superpoints()
    }
}

fn patch_features(hierarchy: &HierarchicalCloud, images: &[PosedImage], cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let supers = hierarchy.superpoints();
    let dim = cfg.features.patch_dim;
    let mut out = FeatureMatrix::zeros(FeatureRole::Patch2d, supers.len(), dim);
    if !cfg.features.use_patch2d || images.is_empty() {
        (0..supers.len()).for_each(|i| out.set_valid(i, false));
        return Ok(out);
    }
    let base = hierarchy.points(0);
    let rows = supers
        .par_iter()
        .map(|s| {
            extract_patch(s, base, images, cfg.features.patch_radius)?
                .map(|p| patch_descriptor(&p.raster, dim))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Some(v) => out.row_mut(i).copy_from_slice(&v),
            None => out.set_valid(i, false),
        }
    }
    Ok(out)
}

pub fn prepare_cloud(input: &CloudInput, cfg: &PipelineConfig) -> Result<PreparedCloud> {
    let h = &cfg.hierarchy;
    let f = &cfg.features;
    let hierarchy = build_hierarchy(&input.points, h.base_voxel, h.num_levels)?;
    let geometry = point_descriptor(&hierarchy, 0, f.geometry_radius, f.geometry_dim())?;
    let views: &[PosedImage] = if f.use_pixel2d { &input.images } else { &[] };
    let pixel = pixelwise_features(hierarchy.points(0), views, f.selection, f.pixel_dim)?;
    let mut pyramid = stage1_pyramid(&geometry, &pixel, &hierarchy)?;
    let stage1 = pyramid.pop().expect("at least two levels");
    let dense_features = pyramid.swap_remove(PreparedCloud::DENSE_LEVEL);
    let patch_features = patch_features(&hierarchy, &input.images, cfg)?;
    let map = FusionMap::seeded(stage1.dim(), f.patch_dim, f.fused_dim, f.fusion_seed)?;
    let fused = fuse_stage2(&stage1, &patch_features, &map)?;
    let patches = point_to_node_group(hierarchy.points(PreparedCloud::DENSE_LEVEL), hierarchy.superpoints(), h.patch_capacity)?;
    debug!(
        "prepared cloud: {} points, {} dense, {} superpoints, {} views",
        input.points.len(),
        hierarchy.points(PreparedCloud::DENSE_LEVEL).len(),
        hierarchy.superpoints().len(),
        input.images.len()
    );
    Ok(PreparedCloud {
        hierarchy,
        patches,
        dense_features,
        fused,
        patch_features,
    })
}

/// Result of registering one pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairOutcome {
    pub evaluation: PairEvaluation,
    pub id_p: String,
    pub id_q: String,
    /// `None` when no transform could be estimated.
    pub transform: Option<RigidTransform>,
    pub coarse_matches: usize,
    /// Fraction of coarse matches whose patches overlap under ground truth.
    pub coarse_inlier_ratio: f64,
    pub fine_matches: usize,
    pub lgr_inliers: usize,
    /// Set when the pair could not be processed at all.
    pub failure: Option<String>,
    #[serde(skip)]
    pub correspondences: Vec<Correspondence>,
}

impl PairOutcome {
    pub fn failed(pair_id: String, id_p: &str, id_q: &str, err: &Error) -> Self {
        Self {
            evaluation: unregistered(pair_id, 0.0, 0),
            id_p: id_p.to_string(),
            id_q: id_q.to_string(),
            transform: None,
            coarse_matches: 0,
            coarse_inlier_ratio: 0.0,
            fine_matches: 0,
            lgr_inliers: 0,
            failure: Some(err.to_string()),
            correspondences: Vec::new(),
        }
    }
}

fn unregistered(pair_id: String, ir: f64, sampled: usize) -> PairEvaluation {
    PairEvaluation {
        pair_id,
        inlier_ratio: ir,
        rmse: f64::INFINITY,
        re_deg: f64::NAN,
        te_m: f64::NAN,
        registered: false,
        sampled_count: sampled,
    }
}

pub fn coarse_inlier_ratio(coarse: &CoarseMatches, p: &PreparedCloud, q: &PreparedCloud, gt: &RigidTransform, radius: f64) -> f64 {
    if coarse.pairs.is_empty() {
        return 0.0;
    }
    let hits = coarse
        .pairs
        .iter()
        .filter(|m| patch_overlap_ratio(&p.patches[m.p], p.dense_points(), &q.patches[m.q], q.dense_points(), gt, radius) > 0.0)
        .count();
    hits as f64 / coarse.pairs.len() as f64
}

/// Matches, estimates and evaluates one prepared pair.
pub fn register_prepared(
    pair_id: String,
    ids: (&str, &str),
    p: &PreparedCloud,
    q: &PreparedCloud,
    gt: &RigidTransform,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PairOutcome> {
    let (coarse, fine) = match_pair(&p.fused, &q.fused, &p.patches, &q.patches, &p.dense_features, &q.dense_features, &cfg.matching)?;
    let (dp, dq) = (p.dense_points(), q.dense_points());
    let correspondences: Vec<Correspondence> = fine.flatten().iter().map(|m| (dp[m.p], dq[m.q])).collect();
    let (ir, sampled) = inlier_ratio(&correspondences, gt, cfg.thresholds.ir_radius, Some(cfg.ir_sample_size), seed)?;
    let coarse_ir = coarse_inlier_ratio(&coarse, p, q, gt, cfg.gt_radius);
    let estimate = match lgr(&fine, dp, dq, &cfg.estimation) {
        Ok(r) => Some(r),
        Err(Error::NoValidCandidate) => None,
        Err(e) => return Err(e),
    };
    let gt_corr = ground_truth_correspondences(dp, dq, gt, cfg.gt_radius);
    let evaluation = match &estimate {
        Some(r) => {
            let err = match rmse(&gt_corr, &r.transform) {
                Ok(v) => v,
                Err(Error::EmptyCorrespondences) => {
                    warn!("{pair_id}: no ground-truth correspondences within {} m", cfg.gt_radius);
                    f64::INFINITY
                }
                Err(e) => return Err(e),
            };
            PairEvaluation {
                pair_id: pair_id.clone(),
                inlier_ratio: ir,
                rmse: err,
                re_deg: rotation_error(&r.transform, gt),
                te_m: translation_error(&r.transform, gt),
                registered: err < cfg.thresholds.rr_rmse,
                sampled_count: sampled,
            }
        }
        None => unregistered(pair_id.clone(), ir, sampled),
    };
    debug!(
        "{pair_id}: coarse {} (ir {coarse_ir:.3}), fine {}, ir {ir:.3}, rmse {:.4}",
        coarse.pairs.len(),
        correspondences.len(),
        evaluation.rmse
    );
    Ok(PairOutcome {
        evaluation,
        id_p: ids.0.to_string(),
        id_q: ids.1.to_string(),
        transform: estimate.as_ref().map(|r| r.transform),
        coarse_matches: coarse.pairs.len(),
        coarse_inlier_ratio: coarse_ir,
        fine_matches: correspondences.len(),
        lgr_inliers: estimate.as_ref().map_or(0, |r| r.inlier_indices.len()),
        failure: None,
        correspondences,
    })
}

pub fn pair_label(index: usize, id_p: &str, id_q: &str) -> String {
    format!("{index:04}:{id_p}:{id_q}")
}

fn pair_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

/// Runs every manifest pair. Per-pair errors are recorded in the outcome
/// and do not stop the run. Output order follows the manifest.
pub fn run_manifest(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<Vec<PairOutcome>> {
    cfg.validate()?;
    let mut ids: Vec<&str> = manifest.pairs.iter().flat_map(|p| [p.id_p.as_str(), p.id_q.as_str()]).collect();
    ids.sort_unstable();
    ids.dedup();
    info!("preparing {} clouds for {} pairs", ids.len(), manifest.pairs.len());
    let prepared: BTreeMap<&str, std::result::Result<PreparedCloud, String>> = ids
        .par_iter()
        .map(|id| {
            let r = load_cloud_input(manifest, id, cfg).and_then(|input| prepare_cloud(&input, cfg));
            if let Err(e) = &r {
                warn!("cloud {id}: {e}");
            }
            (*id, r.map_err(|e| e.to_string()))
        })
        .collect();
    let outcomes: Vec<PairOutcome> = manifest
        .pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let label = pair_label(i, &pair.id_p, &pair.id_q);
            let run = || -> Result<PairOutcome> {
                let get = |id: &str| -> Result<&PreparedCloud> {
                    prepared[id]
                        .as_ref()
                        .map_err(|msg| Error::InvalidArgument(format!("cloud {id} unavailable: {msg}")))
                };
                let (p, q) = (get(&pair.id_p)?, get(&pair.id_q)?);
                register_prepared(label.clone(), (&pair.id_p, &pair.id_q), p, q, &pair.gt, cfg, pair_seed(cfg.seed, i))
            };
            run().unwrap_or_else(|e| {
                warn!("{label}: {e}");
                PairOutcome::failed(label.clone(), &pair.id_p, &pair.id_q, &e)
            })
        })
        .collect();
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, GeneratorParams, SceneKind};

    fn cheap() -> GeneratorParams {
        GeneratorParams {
            pairs: 1,
            spacing: 0.03,
            ..Default::default()
        }
    }

    #[test]
    fn self_pair_registers_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(SceneKind::Cluttered, &cheap()).unwrap();
        let path = data.write(dir.path()).unwrap();
        let mut m = crate::io::manifest::load_manifest(&path).unwrap();
        let id = m.pairs[0].id_p.clone();
        m.pairs[0].id_q = id;
        m.pairs[0].gt = RigidTransform::identity();
        let out = run_manifest(&m, &PipelineConfig::default()).unwrap();
        let e = &out[0].evaluation;
        assert!(out[0].failure.is_none());
        assert!(e.registered && e.rmse < 1e-3 && e.re_deg < 0.05, "{e:?}");
    }

    #[test]
    fn missing_cloud_is_a_pair_failure() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(SceneKind::TexturedPlane, &GeneratorParams { pairs: 2, ..cheap() }).unwrap();
        let path = data.write(dir.path()).unwrap();
        let m = crate::io::manifest::load_manifest(&path).unwrap();
        std::fs::remove_file(m.resolve(&m.clouds[&m.pairs[1].id_q].path)).unwrap();
        let out = run_manifest(&m, &PipelineConfig::default()).unwrap();
        assert!(out[0].failure.is_none());
        assert!(out[1].failure.is_some());
        assert!(!out[1].evaluation.registered);
    }

    #[test]
    fn disabled_image_features_ignore_the_views() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(SceneKind::TexturedPlane, &cheap()).unwrap();
        let path = data.write(dir.path()).unwrap();
        let m = crate::io::manifest::load_manifest(&path).unwrap();
        let mut off = PipelineConfig::default();
        off.features.use_pixel2d = false;
        off.features.use_patch2d = false;
        let mut none = PipelineConfig::default();
        none.features.images_per_cloud = 0;
        let id = &m.pairs[0].id_p;
        let a = prepare_cloud(&load_cloud_input(&m, id, &off).unwrap(), &off).unwrap();
        let b = prepare_cloud(&load_cloud_input(&m, id, &none).unwrap(), &none).unwrap();
        assert_eq!(a.fused, b.fused);
        assert_eq!(a.dense_features, b.dense_features);
        assert!(!a.patch_features.validity_mask().iter().any(|&v| v));
    }
}
