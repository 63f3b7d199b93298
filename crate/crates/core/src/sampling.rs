//! Voxel-grid subsampling, the level hierarchy (dense points / superpoints),
//! exact radius search and point-to-node patch grouping.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};

pub const DEFAULT_BASE_VOXEL: f64 = 0.025;
pub const DEFAULT_NUM_LEVELS: usize = 4;
pub const DEFAULT_PATCH_CAPACITY: usize = 64;

type VoxelKey = (i64, i64, i64);

fn voxel_key(p: &Point3, size: f64) -> VoxelKey {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Replaces every non-empty voxel by the centroid of its members.
///
/// Output order follows the first appearance of each voxel in the input.
/// The returned parent map sends input index `i` to its output index.
pub fn grid_subsample(points: &[Point3], voxel: f64) -> Result<(Vec<Point3>, Vec<usize>)> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "voxel size must be positive, got {voxel}"
        )));
    }
    let mut slots: HashMap<VoxelKey, usize> = HashMap::with_capacity(points.len() / 2);
    let mut sums: Vec<(nalgebra::Vector3<f64>, usize)> = Vec::new();
    let mut parents = Vec::with_capacity(points.len());
    for p in points {
        let slot = *slots.entry(voxel_key(p, voxel)).or_insert_with(|| {
            sums.push((nalgebra::Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[slot].0 += p.coords;
        sums[slot].1 += 1;
        parents.push(slot);
    }
    let out = sums
        .into_iter()
        .map(|(s, n)| Point3::from(s / n as f64))
        .collect();
    Ok((out, parents))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub points: Vec<Point3>,
    /// Index into the next-coarser level; empty on the coarsest level.
    pub parent_index: Vec<usize>,
}

/// Stack of progressively coarser subsamplings of one cloud.
///
/// Level `k` is subsampled with voxel `base·2^k`; level 1 holds the dense
/// points used for fine matching and the last level holds the superpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalCloud {
    pub levels: Vec<Level>,
    pub voxel_sizes: Vec<f64>,
}

impl HierarchicalCloud {
    pub const DENSE_LEVEL: usize = 1;

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn points(&self, level: usize) -> &[Point3] {
        &self.levels[level].points
    }

    pub fn dense(&self) -> &[Point3] {
        self.points(Self::DENSE_LEVEL)
    }

    pub fn superpoint_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn superpoints(&self) -> &[Point3] {
        self.points(self.superpoint_level())
    }

    /// Follows parent links from `from` up to the coarser level `to`.
    pub fn ancestor(&self, from: usize, index: usize, to: usize) -> usize {
        assert!(to >= from, "ancestor level must not be finer");
        (from..to).fold(index, |i, l| self.levels[l].parent_index[i])
    }
}

pub fn build_hierarchy(points: &[Point3], base_voxel: f64, num_levels: usize) -> Result<HierarchicalCloud> {
    if num_levels < 2 {
        return Err(Error::InvalidArgument(format!(
            "hierarchy needs at least 2 levels, got {num_levels}"
        )));
    }
    let mut current = grid_subsample(points, base_voxel)?.0;
    let mut levels = Vec::with_capacity(num_levels);
    let mut voxel_sizes = vec![base_voxel];
    for k in 1..num_levels {
        let voxel = base_voxel * f64::powi(2.0, k as i32);
        let (next, parents) = grid_subsample(&current, voxel)?;
        levels.push(Level {
            points: current,
            parent_index: parents,
        });
        voxel_sizes.push(voxel);
        current = next;
    }
    levels.push(Level {
        points: current,
        parent_index: Vec::new(),
    });
    Ok(HierarchicalCloud {
        levels,
        voxel_sizes,
    })
}

fn sort_by_distance(center: &Point3, cloud: &[Point3], idx: &mut [usize]) {
    idx.sort_by(|&a, &b| {
        let da = (cloud[a] - center).norm_squared();
        let db = (cloud[b] - center).norm_squared();
        da.total_cmp(&db).then(a.cmp(&b))
    });
}

/// Indices with `‖p − center‖ ≤ radius`, nearest first (ties by index).
pub fn radius_neighbors(center: &Point3, cloud: &[Point3], radius: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cloud.len())
        .filter(|&i| (cloud[i] - center).norm() <= radius)
        .collect();
    sort_by_distance(center, cloud, &mut idx);
    idx
}

/// Uniform hash grid over a borrowed cloud. Queries are exact.
#[derive(Debug, Clone)]
pub struct SpatialGrid<'a> {
    points: &'a [Point3],
    cell: f64,
    buckets: HashMap<VoxelKey, Vec<usize>>,
}

impl<'a> SpatialGrid<'a> {
    pub fn new(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut buckets: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(voxel_key(p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            buckets,
        }
    }

    pub fn points(&self) -> &'a [Point3] {
        self.points
    }

    fn for_each_candidate(&self, center: &Point3, radius: f64, mut f: impl FnMut(usize)) {
        let lo = voxel_key(&(center - nalgebra::Vector3::repeat(radius)), self.cell);
        let hi = voxel_key(&(center + nalgebra::Vector3::repeat(radius)), self.cell);
        let span = ((hi.0 - lo.0 + 1) * (hi.1 - lo.1 + 1) * (hi.2 - lo.2 + 1)) as usize;
        if span > self.buckets.len() {
            for bucket in self.buckets.values() {
                bucket.iter().copied().for_each(&mut f);
            }
            return;
        }
        for x in lo.0..=hi.0 {
            for y in lo.1..=hi.1 {
                for z in lo.2..=hi.2 {
                    if let Some(bucket) = self.buckets.get(&(x, y, z)) {
                        bucket.iter().copied().for_each(&mut f);
                    }
                }
            }
        }
    }

    pub fn radius_neighbors(&self, center: &Point3, radius: f64) -> Vec<usize> {
        let mut idx = Vec::new();
        self.for_each_candidate(center, radius, |i| {
            if (self.points[i] - center).norm() <= radius {
                idx.push(i);
            }
        });
        sort_by_distance(center, self.points, &mut idx);
        idx
    }

    /// True if some point lies strictly closer than `radius`.
    pub fn has_neighbor_within(&self, center: &Point3, radius: f64) -> bool {
        let mut found = false;
        self.for_each_candidate(center, radius, |i| {
            found |= (self.points[i] - center).norm() < radius;
        });
        found
    }

    /// Nearest point strictly closer than `radius`, ties by lowest index.
    pub fn nearest_within(&self, center: &Point3, radius: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.for_each_candidate(center, radius, |i| {
            let d = (self.points[i] - center).norm();
            if d < radius {
                match best {
                    Some((bi, bd)) if d > bd || (d == bd && i > bi) => {}
                    _ => best = Some((i, d)),
                }
            }
        });
        best
    }
}

/// Dense points grouped around one superpoint, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpointPatch {
    pub superpoint_index: usize,
    pub member_indices: Vec<usize>,
}

impl SuperpointPatch {
    pub fn size(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }
}

fn nearest_node(p: &Point3, supers: &[Point3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, s) in supers.iter().enumerate() {
        let d = (p - s).norm_squared();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Assigns every dense point to its nearest superpoint (ties to the lowest
/// superpoint index) and keeps at most `m_max` members per patch.
pub fn point_to_node_group(dense: &[Point3], supers: &[Point3], m_max: usize) -> Result<Vec<SuperpointPatch>> {
    if supers.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut patches: Vec<SuperpointPatch> = (0..supers.len())
        .map(|j| SuperpointPatch {
            superpoint_index: j,
            member_indices: Vec::new(),
        })
        .collect();
    for (i, p) in dense.iter().enumerate() {
        patches[nearest_node(p, supers)].member_indices.push(i);
    }
    for patch in &mut patches {
        let center = supers[patch.superpoint_index];
        sort_by_distance(&center, dense, &mut patch.member_indices);
        patch.member_indices.truncate(m_max);
    }
    Ok(patches)
}

/// Fraction of `patch_p` members with a `patch_q` member within `radius`
/// once moved by `gt`.
pub fn patch_overlap_ratio(
    patch_p: &SuperpointPatch,
    dense_p: &[Point3],
    patch_q: &SuperpointPatch,
    dense_q: &[Point3],
    gt: &RigidTransform,
    radius: f64,
) -> f64 {
    if patch_p.is_empty() {
        return 0.0;
    }
    let hits = patch_p
        .member_indices
        .iter()
        .filter(|&&i| {
            let p = gt.apply(&dense_p[i]);
            patch_q
                .member_indices
                .iter()
                .any(|&j| (dense_q[j] - p).norm() < radius)
        })
        .count();
    hits as f64 / patch_p.size() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(seed: u64, n: usize, extent: f64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                )
            })
            .collect()
    }

    #[test]
    fn subsample_single_voxel_centroid() {
        let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(0.01, 0.0, 0.0)];
        let (out, parents) = grid_subsample(&pts, 0.05).unwrap();
        assert_eq!(out, vec![Point3::new(0.005, 0.0, 0.0)]);
        assert_eq!(parents, vec![0, 0]);
    }

    #[test]
    fn subsample_separate_voxels() {
        let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let (out, parents) = grid_subsample(&pts, 0.05).unwrap();
        assert_eq!(out, pts.to_vec());
        assert_eq!(parents, vec![0, 1]);
    }

    #[test]
    fn subsample_errors() {
        assert!(matches!(grid_subsample(&[], 0.1), Err(Error::EmptyInput)));
        assert!(grid_subsample(&[Point3::origin()], 0.0).is_err());
    }

    #[test]
    fn subsample_matches_bucket_oracle() {
        let pts = random_cloud(10, 10_000, 1.0);
        let (out, parents) = grid_subsample(&pts, 0.1).unwrap();
        assert!(out.len() <= 1000);
        // independent bucketing via a BTreeMap keyed on integer voxel coords
        let mut buckets: std::collections::BTreeMap<(i64, i64, i64), Vec<usize>> = Default::default();
        for (i, p) in pts.iter().enumerate() {
            let key = ((p.x * 10.0).floor() as i64, (p.y * 10.0).floor() as i64, (p.z * 10.0).floor() as i64);
            buckets.entry(key).or_default().push(i);
        }
        assert_eq!(buckets.len(), out.len());
        for members in buckets.values() {
            let slot = parents[members[0]];
            assert!(members.iter().all(|&i| parents[i] == slot));
            let c = members.iter().fold(nalgebra::Vector3::zeros(), |acc, &i| acc + pts[i].coords)
                / members.len() as f64;
            assert!((out[slot].coords - c).norm() < 1e-12);
        }
    }

    #[test]
    fn hierarchy_single_point() {
        let h = build_hierarchy(&[Point3::new(0.3, 0.2, 0.1)], 0.025, 4).unwrap();
        assert_eq!(h.num_levels(), 4);
        assert!(h.levels.iter().all(|l| l.points.len() == 1));
        assert_eq!(h.voxel_sizes, vec![0.025, 0.05, 0.1, 0.2]);
    }

    #[test]
    fn hierarchy_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = Vec::new();
        // each cluster sits strictly inside one 0.2 m voxel
        for center in [Point3::new(0.1, 0.1, 0.1), Point3::new(1.1, 0.1, 0.1)] {
            for _ in 0..500 {
                let off = nalgebra::Vector3::from_fn(|_, _| rng.random_range(-0.04..0.04));
                pts.push(center + off);
            }
        }
        let h = build_hierarchy(&pts, 0.025, 4).unwrap();
        assert_eq!(h.superpoints().len(), 2);
    }

    #[test]
    fn hierarchy_levels_are_monotone_with_valid_parents() {
        let pts = random_cloud(12, 5000, 1.0);
        let h = build_hierarchy(&pts, 0.025, 4).unwrap();
        for k in 0..h.num_levels() - 1 {
            assert!(h.levels[k + 1].points.len() <= h.levels[k].points.len());
            let next = h.levels[k + 1].points.len();
            assert_eq!(h.levels[k].parent_index.len(), h.levels[k].points.len());
            assert!(h.levels[k].parent_index.iter().all(|&p| p < next));
        }
        assert!(build_hierarchy(&pts, 0.025, 1).is_err());
        assert!(build_hierarchy(&[], 0.025, 4).is_err());
    }

    #[test]
    fn resubsampling_is_idempotent_in_count() {
        let pts = random_cloud(13, 3000, 1.0);
        let (once, _) = grid_subsample(&pts, 0.1).unwrap();
        let (twice, _) = grid_subsample(&once, 0.1).unwrap();
        assert_eq!(once.len(), twice.len());
    }

    #[test]
    fn radius_neighbors_cases() {
        let cloud = [Point3::new(0.1, 0.0, 0.0), Point3::new(0.3, 0.0, 0.0)];
        assert_eq!(radius_neighbors(&Point3::origin(), &cloud, 0.2), vec![0]);
        assert_eq!(radius_neighbors(&cloud[1], &cloud, 1e-12), vec![1]);
        assert_eq!(radius_neighbors(&cloud[1], &cloud, 0.0), vec![1]);
    }

    #[test]
    fn grid_queries_match_linear_scan() {
        let pts = random_cloud(14, 2000, 2.0);
        let grid = SpatialGrid::new(&pts, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let c = Point3::new(
                rng.random_range(-0.5..2.5),
                rng.random_range(-0.5..2.5),
                rng.random_range(-0.5..2.5),
            );
            let r = rng.random_range(0.01..0.6);
            let scan = radius_neighbors(&c, &pts, r);
            assert_eq!(grid.radius_neighbors(&c, r), scan);
            let strict: Vec<_> = scan.iter().copied().filter(|&i| (pts[i] - c).norm() < r).collect();
            assert_eq!(grid.has_neighbor_within(&c, r), !strict.is_empty());
            assert_eq!(grid.nearest_within(&c, r).map(|x| x.0), strict.first().copied());
        }
    }

    #[test]
    fn grouping_single_node_and_tie() {
        let dense = random_cloud(16, 100, 1.0);
        let patches = point_to_node_group(&dense, &[Point3::new(0.5, 0.5, 0.5)], 64).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].size(), 64);

        let supers = [Point3::new(-1.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let patches = point_to_node_group(&[Point3::origin()], &supers, 64).unwrap();
        assert_eq!(patches[0].member_indices, vec![0]);
        assert!(patches[1].is_empty());
        assert!(point_to_node_group(&dense, &[], 4).is_err());
    }

    #[test]
    fn grouping_matches_exhaustive_oracle() {
        let dense = random_cloud(17, 800, 1.0);
        let supers = random_cloud(18, 20, 1.0);
        let patches = point_to_node_group(&dense, &supers, usize::MAX).unwrap();
        let mut seen = vec![0usize; dense.len()];
        for patch in &patches {
            for &i in &patch.member_indices {
                seen[i] += 1;
                let d_own = (dense[i] - supers[patch.superpoint_index]).norm();
                for (j, s) in supers.iter().enumerate() {
                    let d = (dense[i] - s).norm();
                    assert!(d > d_own || (d == d_own && j >= patch.superpoint_index));
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));

        let truncated = point_to_node_group(&dense, &supers, 10).unwrap();
        for (full, cut) in patches.iter().zip(&truncated) {
            assert!(cut.size() <= 10);
            assert!(cut.member_indices.iter().all(|i| full.member_indices.contains(i)));
            assert_eq!(cut.member_indices[..], full.member_indices[..cut.size()]);
        }
    }

    #[test]
    fn overlap_ratio_cases() {
        let dense: Vec<_> = (0..10).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let all = SuperpointPatch {
            superpoint_index: 0,
            member_indices: (0..10).collect(),
        };
        let id = RigidTransform::identity();
        assert_eq!(patch_overlap_ratio(&all, &dense, &all, &dense, &id, 0.01), 1.0);

        let far: Vec<_> = dense.iter().map(|p| p + nalgebra::Vector3::new(0.0, 10.0, 0.0)).collect();
        assert_eq!(patch_overlap_ratio(&all, &dense, &all, &far, &id, 0.5), 0.0);

        // second patch covers the first five points only
        let half = SuperpointPatch {
            superpoint_index: 0,
            member_indices: (0..5).collect(),
        };
        let ratio = patch_overlap_ratio(&all, &dense, &half, &dense, &id, 0.05);
        let oracle = (0..10)
            .filter(|&i| (0..5).any(|j| (dense[i] - dense[j]).norm() < 0.05))
            .count() as f64
            / 10.0;
        assert_eq!(ratio, oracle);
        assert_eq!(ratio, 0.5);
    }

    #[test]
    fn overlap_ratio_invariant_under_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let dp = random_cloud(20, 60, 0.5);
        let gt = RigidTransform::random(&mut rng, 1.0);
        let dq: Vec<_> = dp
            .iter()
            .map(|p| gt.apply(p) + nalgebra::Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)))
            .collect();
        let pp = SuperpointPatch { superpoint_index: 0, member_indices: (0..40).collect() };
        let pq = SuperpointPatch { superpoint_index: 0, member_indices: (20..60).collect() };
        let base = patch_overlap_ratio(&pp, &dp, &pq, &dq, &gt, 0.05);
        for _ in 0..10 {
            let a = RigidTransform::random(&mut rng, 3.0);
            let b = RigidTransform::random(&mut rng, 3.0);
            let dp2: Vec<_> = dp.iter().map(|p| a.apply(p)).collect();
            let dq2: Vec<_> = dq.iter().map(|q| b.apply(q)).collect();
            let gt2 = b.compose(&gt).compose(&a.inverse());
            let moved = patch_overlap_ratio(&pp, &dp2, &pq, &dq2, &gt2, 0.05);
            assert!((moved - base).abs() < 1e-12);
        }
    }
}
