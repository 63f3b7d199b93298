//! Two-stage cross-modal fusion.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{normalize, FeatureMatrix, FeatureRole};
use crate::error::{Error, Result};
use crate::sampling::HierarchicalCloud;

/// Single linear layer `y = W x + b` followed by ReLU in [`fuse_stage2`].
/// `weight` is stored as `dim_out × (dim_3d + dim_2d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMap {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
    seed: Option<u64>,
}

impl FusionMap {
    /// Random map with rows `[G; −G]`, `G ~ N(0, 1/in)`, and zero bias, so
    /// the ReLU keeps both signs of each projection.
    pub fn seeded(dim_3d: usize, dim_2d: usize, dim_out: usize, seed: u64) -> Result<Self> {
        let dim_in = dim_3d + dim_2d;
        if dim_in == 0 || dim_out == 0 || dim_out % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "fusion map needs a non-empty input and an even output dim, got {dim_in} -> {dim_out}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / dim_in as f64).sqrt()).expect("valid std");
        let half = dim_out / 2;
        let g = DMatrix::from_fn(half, dim_in, |_, _| normal.sample(&mut rng));
        let weight = DMatrix::from_fn(dim_out, dim_in, |r, c| if r < half { g[(r, c)] } else { -g[(r - half, c)] });
        Ok(Self {
            weight,
            bias: DVector::zeros(dim_out),
            seed: Some(seed),
        })
    }

    /// `[I | 0]`: passes the 3D block through unchanged.
    pub fn identity_block(dim_3d: usize, dim_2d: usize) -> Self {
        let weight = DMatrix::from_fn(dim_3d, dim_3d + dim_2d, |r, c| if r == c { 1.0 } else { 0.0 });
        Self {
            weight,
            bias: DVector::zeros(dim_3d),
            seed: None,
        }
    }

    pub fn from_parts(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if bias.len() != weight.nrows() {
            return Err(Error::DimensionMismatch {
                what: "fusion bias",
                expected: weight.nrows(),
                got: bias.len(),
            });
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fusion map"));
        }
        Ok(Self {
            weight,
            bias,
            seed: None,
        })
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn dim_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn dim_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Stage-1 features on every hierarchy level. Level 0 rows are
/// `[g/‖g‖ ‖ p/‖p‖] / √2`; each coarser level is the mean of its children,
/// and every level is row-normalized.
pub fn stage1_pyramid(point_feats: &FeatureMatrix, pixel_feats: &FeatureMatrix, hierarchy: &HierarchicalCloud) -> Result<Vec<FeatureMatrix>> {
    let n0 = hierarchy.points(0).len();
    for (what, m) in [("geometry rows", point_feats), ("pixel rows", pixel_feats)] {
        if m.rows() != n0 {
            return Err(Error::DimensionMismatch {
                what,
                expected: n0,
                got: m.rows(),
            });
        }
    }
    let (dg, dp) = (point_feats.dim(), pixel_feats.dim());
    let mut base = FeatureMatrix::zeros(FeatureRole::Point3d, n0, dg + dp);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n0 {
        let row = base.row_mut(i);
        row[..dg].copy_from_slice(point_feats.row(i));
        row[dg..].copy_from_slice(pixel_feats.row(i));
        normalize(&mut row[..dg]);
        normalize(&mut row[dg..]);
        row.iter_mut().for_each(|v| *v *= half);
        normalize(row);
        base.set_valid(i, point_feats.is_valid(i));
    }
    let mut pyramid = vec![base];
    for level in 1..hierarchy.num_levels() {
        let prev = pyramid.last().unwrap();
        let parents = &hierarchy.levels[level - 1].parent_index;
        let n = hierarchy.points(level).len();
        let mut next = FeatureMatrix::zeros(FeatureRole::Point3d, n, dg + dp);
        let mut counts = vec![0usize; n];
        let mut any_valid = vec![false; n];
        for (child, &parent) in parents.iter().enumerate() {
            next.row_mut(parent).iter_mut().zip(prev.row(child)).for_each(|(a, b)| *a += b);
            counts[parent] += 1;
            any_valid[parent] |= prev.is_valid(child);
        }
        for j in 0..n {
            let c = counts[j].max(1) as f64;
            next.row_mut(j).iter_mut().for_each(|v| *v /= c);
            normalize(next.row_mut(j));
            next.set_valid(j, any_valid[j]);
        }
        pyramid.push(next);
    }
    Ok(pyramid)
}

/// Stage-1 fused features at the superpoint level.
pub fn fuse_stage1(point_feats: &FeatureMatrix, pixel_feats: &FeatureMatrix, hierarchy: &HierarchicalCloud) -> Result<FeatureMatrix> {
    Ok(stage1_pyramid(point_feats, pixel_feats, hierarchy)?.pop().unwrap())
}

/// `normalize(max(0, W [f3d ‖ f2d] + b))` per row. Rows whose patch feature
/// is invalid use a zero 2D block and stay flagged invalid.
pub fn fuse_stage2(super_feats: &FeatureMatrix, patch_feats: &FeatureMatrix, map: &FusionMap) -> Result<FeatureMatrix> {
    if super_feats.rows() != patch_feats.rows() {
        return Err(Error::DimensionMismatch {
            what: "patch feature rows",
            expected: super_feats.rows(),
            got: patch_feats.rows(),
        });
    }
    let (d3, d2) = (super_feats.dim(), patch_feats.dim());
    if d3 + d2 != map.dim_in() {
        return Err(Error::DimensionMismatch {
            what: "fusion map input dim",
            expected: map.dim_in(),
            got: d3 + d2,
        });
    }
    let mut out = FeatureMatrix::zeros(FeatureRole::Fused, super_feats.rows(), map.dim_out());
    let mut x = DVector::zeros(d3 + d2);
    for i in 0..super_feats.rows() {
        x.rows_mut(0, d3).copy_from_slice(super_feats.row(i));
        if patch_feats.is_valid(i) {
            x.rows_mut(d3, d2).copy_from_slice(patch_feats.row(i));
        } else {
            x.rows_mut(d3, d2).fill(0.0);
        }
        let y = &map.weight * &x + &map.bias;
        let row = out.row_mut(i);
        for (r, v) in row.iter_mut().zip(y.iter()) {
            *r = v.max(0.0);
        }
        normalize(row);
        out.set_valid(i, super_feats.is_valid(i) && patch_feats.is_valid(i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::sampling::{HierarchicalCloud, Level};

    fn toy_hierarchy() -> HierarchicalCloud {
        let p = |x: f64| Point3::new(x, 0.0, 0.0);
        HierarchicalCloud {
            levels: vec![
                Level {
                    points: vec![p(0.0), p(0.1), p(1.0), p(1.1)],
                    parent_index: vec![0, 0, 1, 1],
                },
                Level {
                    points: vec![p(0.05), p(1.05)],
                    parent_index: vec![0, 0],
                },
                Level {
                    points: vec![p(0.5)],
                    parent_index: vec![],
                },
            ],
            voxel_sizes: vec![0.1, 0.2, 0.4],
        }
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn pooling_matches_hand_means() {
        let h = toy_hierarchy();
        let g = FeatureMatrix::from_rows(
            FeatureRole::Point3d,
            2,
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let px = FeatureMatrix::from_rows(FeatureRole::Pixel2d, 1, &[vec![3.0], vec![3.0], vec![2.0], vec![2.0]]).unwrap();
        let pyr = stage1_pyramid(&g, &px, &h).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(pyr[0].row(1), &[0.0, s, s]);
        // mean of (s,0,s) and (0,s,s), renormalized
        let expected = unit(&[s / 2.0, s / 2.0, s]);
        for (a, b) in pyr[1].row(0).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(pyr[1].row(1), &[s, 0.0, s]);
        let top = unit(&[(expected[0] + s) / 2.0, expected[1] / 2.0, (expected[2] + s) / 2.0]);
        let fused = fuse_stage1(&g, &px, &h).unwrap();
        for (a, b) in fused.row(0).iter().zip(&top) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_pooling_is_identity() {
        let h = HierarchicalCloud {
            levels: vec![
                Level {
                    points: vec![Point3::origin()],
                    parent_index: vec![0],
                },
                Level {
                    points: vec![Point3::origin()],
                    parent_index: vec![],
                },
            ],
            voxel_sizes: vec![0.1, 0.2],
        };
        let g = FeatureMatrix::from_rows(FeatureRole::Point3d, 2, &[vec![0.6, 0.8]]).unwrap();
        let px = FeatureMatrix::from_rows(FeatureRole::Pixel2d, 2, &[vec![1.0, 1.0]]).unwrap();
        let pyr = stage1_pyramid(&g, &px, &h).unwrap();
        assert_eq!(pyr[0], pyr[1]);
    }

    #[test]
    fn constant_pixel_block_leaves_geometry_direction() {
        let h = toy_hierarchy();
        let g = FeatureMatrix::from_rows(
            FeatureRole::Point3d,
            2,
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8], vec![1.0, 0.0]],
        )
        .unwrap();
        let mut ones = FeatureMatrix::zeros(FeatureRole::Pixel2d, 4, 3);
        for i in 0..4 {
            ones.row_mut(i).fill(1.0);
        }
        let pyr = stage1_pyramid(&g, &ones, &h).unwrap();
        for j in 0..2 {
            let children: Vec<usize> = (0..4).filter(|&i| h.levels[0].parent_index[i] == j).collect();
            let mean: Vec<f64> = (0..2).map(|k| children.iter().map(|&i| g.row(i)[k]).sum::<f64>()).collect();
            let geo = unit(&mean);
            let row = pyr[1].row(j);
            let got = unit(&row[..2]);
            for k in 0..2 {
                assert!((got[k] - geo[k]).abs() < 1e-12);
            }
            assert!((row[2] - row[3]).abs() < 1e-15 && (row[3] - row[4]).abs() < 1e-15);
        }
    }

    #[test]
    fn stage1_rejects_row_mismatch() {
        let h = toy_hierarchy();
        let g = FeatureMatrix::zeros(FeatureRole::Point3d, 3, 2);
        let px = FeatureMatrix::zeros(FeatureRole::Pixel2d, 4, 2);
        assert!(matches!(stage1_pyramid(&g, &px, &h), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn identity_block_passes_geometry() {
        let f3 = FeatureMatrix::from_rows(FeatureRole::Point3d, 3, &[vec![3.0, 0.0, 4.0]]).unwrap();
        let f2 = FeatureMatrix::zeros(FeatureRole::Patch2d, 1, 2);
        let out = fuse_stage2(&f3, &f2, &FusionMap::identity_block(3, 2)).unwrap();
        assert_eq!(out.row(0), &[0.6, 0.0, 0.8]);
        assert_eq!(out.role(), FeatureRole::Fused);
    }

    #[test]
    fn seeded_map_matches_hand_multiply() {
        let map = FusionMap::seeded(3, 2, 4, 42).unwrap();
        assert_eq!(map, FusionMap::seeded(3, 2, 4, 42).unwrap());
        let f3 = FeatureMatrix::from_rows(FeatureRole::Point3d, 3, &[vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]]).unwrap();
        let f2 = FeatureMatrix::from_rows(FeatureRole::Patch2d, 2, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let out = fuse_stage2(&f3, &f2, &map).unwrap();
        let w = map.weight();
        for i in 0..2 {
            let x: Vec<f64> = f3.row(i).iter().chain(f2.row(i)).copied().collect();
            let mut y: Vec<f64> = (0..4)
                .map(|r| (0..5).map(|c| w[(r, c)] * x[c]).sum::<f64>().max(0.0))
                .collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            y.iter_mut().for_each(|v| *v /= n);
            for (a, b) in out.row(i).iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // antithetic rows
        for c in 0..5 {
            assert_eq!(w[(0, c)], -w[(2, c)]);
        }
        assert_eq!(out, fuse_stage2(&f3, &f2, &map).unwrap());
    }

    #[test]
    fn invalid_patch_uses_zero_block() {
        let map = FusionMap::seeded(2, 2, 4, 1).unwrap();
        let f3 = FeatureMatrix::from_rows(FeatureRole::Point3d, 2, &[vec![1.0, 0.0]]).unwrap();
        let mut f2 = FeatureMatrix::from_rows(FeatureRole::Patch2d, 2, &[vec![0.5, 0.5]]).unwrap();
        f2.set_valid(0, false);
        let zero = FeatureMatrix::zeros(FeatureRole::Patch2d, 1, 2);
        let a = fuse_stage2(&f3, &f2, &map).unwrap();
        let b = fuse_stage2(&f3, &zero, &map).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert!(!a.is_valid(0));
        assert!(fuse_stage2(&f3, &FeatureMatrix::zeros(FeatureRole::Patch2d, 1, 3), &map).is_err());
    }
}
