//! Pipeline configuration, read from JSON. Every field has a default, so a
//! partial file (or `{}`) is valid.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimationConfig;
use crate::features::{SelectionStrategy, FUSED_FEATURE_DIM, PATCH_FEATURE_DIM, PIXEL_FEATURE_DIM, POINT_FEATURE_DIM};
use crate::losses::CircleLossConfig;
use crate::matching::MatchingConfig;
use crate::metrics::{MetricThresholds, IR_SAMPLE_SIZE};
use crate::sampling::{DEFAULT_BASE_VOXEL, DEFAULT_NUM_LEVELS, DEFAULT_PATCH_CAPACITY};
use crate::subsets::PlanarityConfig;

pub const DEFAULT_IMAGES_PER_CLOUD: usize = 3;
pub const DENSE_MATCH_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    pub base_voxel: f64,
    pub num_levels: usize,
    pub patch_capacity: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            base_voxel: DEFAULT_BASE_VOXEL,
            num_levels: DEFAULT_NUM_LEVELS,
            patch_capacity: DEFAULT_PATCH_CAPACITY,
        }
    }
}

/// Where pixel descriptors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelProvider {
    /// Imported feature rasters when the manifest lists them, color
    /// descriptors otherwise.
    #[default]
    Auto,
    /// Always the built-in color descriptor.
    Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub provider: PixelProvider,
    pub images_per_cloud: usize,
    pub selection: SelectionStrategy,
    pub use_pixel2d: bool,
    pub use_patch2d: bool,
    pub geometry_radius: f64,
    pub patch_radius: f64,
    pub pixel_dim: usize,
    pub patch_dim: usize,
    pub point_dim: usize,
    pub fused_dim: usize,
    pub fusion_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            provider: PixelProvider::Auto,
            images_per_cloud: DEFAULT_IMAGES_PER_CLOUD,
            selection: SelectionStrategy::Complement,
            use_pixel2d: true,
            use_patch2d: true,
            geometry_radius: 0.1,
            patch_radius: 0.1,
            pixel_dim: PIXEL_FEATURE_DIM,
            patch_dim: PATCH_FEATURE_DIM,
            point_dim: POINT_FEATURE_DIM,
            fused_dim: FUSED_FEATURE_DIM,
            fusion_seed: 42,
        }
    }
}

impl FeatureConfig {
    /// Width of the geometric block so that `[geometry ‖ pixel]` is
    /// `point_dim` wide.
    pub fn geometry_dim(&self) -> usize {
        self.point_dim.saturating_sub(self.pixel_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub circle: CircleLossConfig,
    pub dense_radius: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            circle: CircleLossConfig::default(),
            dense_radius: DENSE_MATCH_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub hierarchy: HierarchyConfig,
    pub features: FeatureConfig,
    pub matching: MatchingConfig,
    pub estimation: EstimationConfig,
    pub thresholds: MetricThresholds,
    pub ir_sample_size: usize,
    /// Radius for ground-truth correspondences used by RMSE and by the
    /// coarse inlier ratio.
    pub gt_radius: f64,
    pub losses: LossConfig,
    pub planarity: PlanarityConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hierarchy: HierarchyConfig::default(),
            features: FeatureConfig::default(),
            matching: MatchingConfig::default(),
            estimation: EstimationConfig::default(),
            thresholds: MetricThresholds::default(),
            ir_sample_size: IR_SAMPLE_SIZE,
            gt_radius: DENSE_MATCH_RADIUS,
            losses: LossConfig::default(),
            planarity: PlanarityConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        let h = &self.hierarchy;
        if !(h.base_voxel > 0.0) || h.num_levels < 2 || h.patch_capacity == 0 {
            return bad("hierarchy needs base_voxel > 0, num_levels >= 2 and patch_capacity >= 1");
        }
        let f = &self.features;
        if !(f.geometry_radius > 0.0 && f.patch_radius > 0.0) {
            return bad("feature radii must be positive");
        }
        if f.geometry_dim() == 0 || f.pixel_dim == 0 || f.patch_dim == 0 {
            return bad("feature dims must be positive and point_dim must exceed pixel_dim");
        }
        if f.fused_dim == 0 || f.fused_dim % 2 != 0 {
            return bad("fused_dim must be even and positive");
        }
        let m = &self.matching;
        if m.num_coarse == 0 || m.top_k == 0 || m.sinkhorn_iters == 0 {
            return bad("matching counts must be positive");
        }
        let e = &self.estimation;
        if !(e.acceptance_radius > 0.0) || e.refine_iters == 0 {
            return bad("estimation needs acceptance_radius > 0 and refine_iters >= 1");
        }
        let t = &self.thresholds;
        if !(t.ir_radius > 0.0 && t.fmr_min_ir >= 0.0 && t.rr_rmse > 0.0) {
            return bad("metric thresholds must be positive");
        }
        if !(self.gt_radius > 0.0) {
            return bad("gt_radius must be positive");
        }
        Ok(())
    }
}
