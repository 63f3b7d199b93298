//! Descriptor providers and the two-stage cross-modal fusion.
//!
//! Stage one attaches pixel-wise image descriptors to every input point and
//! pools `[geometry ‖ pixel]` up the subsampling hierarchy. Stage two mixes
//! each superpoint feature with the descriptor of its best image patch
//! through one linear layer and a ReLU.

mod fusion;
mod geometric;
mod patch;
mod pixel;

pub use fusion::{fuse_stage1, fuse_stage2, stage1_pyramid, FusionMap};
pub use geometric::{local_shape, point_descriptor, LocalShape, GEOMETRIC_RAW_DIM};
pub use patch::{extract_patch, patch_descriptor, ImagePatch, PatchRaster, PixelBox};
pub use pixel::{local_color_descriptor, pixelwise_features, rank_images_by_proximity, COLOR_RAW_DIM};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::io::ppm::RgbImage;
use crate::io::raster::FeatureRaster;

pub const PIXEL_FEATURE_DIM: usize = 128;
pub const PATCH_FEATURE_DIM: usize = 256;
pub const FUSED_FEATURE_DIM: usize = 256;
pub const POINT_FEATURE_DIM: usize = 256;
pub const PATCH_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    Point3d,
    Pixel2d,
    Patch2d,
    Fused,
}

/// Row-per-point descriptor block with a per-row validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    role: FeatureRole,
    dim: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl FeatureMatrix {
    pub fn zeros(role: FeatureRole, rows: usize, dim: usize) -> Self {
        Self {
            role,
            dim,
            data: vec![0.0; rows * dim],
            valid: vec![true; rows],
        }
    }

    pub fn from_rows(role: FeatureRole, dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::zeros(role, rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "feature row",
                    expected: dim,
                    got: r.len(),
                });
            }
            m.row_mut(i).copy_from_slice(r);
        }
        Ok(m)
    }

    pub fn role(&self) -> FeatureRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.valid.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn set_valid(&mut self, i: usize, valid: bool) {
        self.valid[i] = valid;
    }

    pub fn validity_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Scales every non-zero row to unit L2 norm.
    pub fn normalize_rows(&mut self) {
        for i in 0..self.rows() {
            normalize(self.row_mut(i));
        }
    }

    /// New matrix holding the selected rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(self.role, idx.len(), self.dim);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
            out.valid[k] = self.valid[i];
        }
        out
    }
}

pub(crate) fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// How per-view pixel descriptors are reduced to one per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant", content = "seed")]
pub enum SelectionStrategy {
    /// One visible view chosen uniformly at random (seeded).
    Random(u64),
    /// Average over all visible views.
    Mean,
    /// The closest-ranked view in which the point is visible.
    Complement,
}

impl Default for SelectionStrategy {
    fn default() -> Self {
        Self::Complement
    }
}

/// RGB raster with its camera and an optional imported feature raster.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedImage {
    pub pixels: RgbImage,
    pub camera: CameraModel,
    pub feature_map: Option<FeatureRaster>,
}

impl PosedImage {
    pub fn new(pixels: RgbImage, camera: CameraModel, feature_map: Option<FeatureRaster>) -> Result<Self> {
        if pixels.width != camera.width {
            return Err(Error::DimensionMismatch {
                what: "image width vs camera",
                expected: camera.width as usize,
                got: pixels.width as usize,
            });
        }
        if pixels.height != camera.height {
            return Err(Error::DimensionMismatch {
                what: "image height vs camera",
                expected: camera.height as usize,
                got: pixels.height as usize,
            });
        }
        if let Some(r) = &feature_map {
            if r.width != pixels.width || r.height != pixels.height {
                return Err(Error::DimensionMismatch {
                    what: "feature raster size vs image",
                    expected: pixels.width as usize * pixels.height as usize,
                    got: r.width as usize * r.height as usize,
                });
            }
        }
        Ok(Self {
            pixels,
            camera,
            feature_map,
        })
    }
}
