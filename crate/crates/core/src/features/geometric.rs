//! Hand-crafted local shape descriptors standing in for a learned 3D encoder.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{normalize, FeatureMatrix, FeatureRole};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::sampling::{HierarchicalCloud, SpatialGrid};

/// Length of the raw descriptor before zero padding: normal (3),
/// linearity, planarity, sphericity, height spread, 4 radial shells.
pub const GEOMETRIC_RAW_DIM: usize = 11;
const SHELLS: usize = 4;

/// Covariance eigen-analysis of a neighborhood, eigenvalues descending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalShape {
    pub eigenvalues: [f64; 3],
    /// Eigenvector of the smallest eigenvalue, oriented with `z ≥ 0`.
    pub normal: Vector3<f64>,
    pub linearity: f64,
    pub planarity: f64,
    pub sphericity: f64,
}

fn orient(mut n: Vector3<f64>) -> Vector3<f64> {
    let key = if n.z.abs() > 1e-12 {
        n.z
    } else if n.y.abs() > 1e-12 {
        n.y
    } else {
        n.x
    };
    if key < 0.0 {
        n = -n;
    }
    n
}

/// `None` for fewer than three points or a zero-spread neighborhood.
pub fn local_shape(points: &[Point3]) -> Option<LocalShape> {
    if points.len() < 3 {
        return None;
    }
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / points.len() as f64;
    let cov = points.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p.coords - mean;
        a + d * d.transpose()
    }) / points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let ev = order.map(|k| eig.eigenvalues[k].max(0.0));
    if ev[0] <= 0.0 {
        return None;
    }
    let normal = orient(eig.eigenvectors.column(order[2]).into_owned());
    Some(LocalShape {
        eigenvalues: ev,
        normal,
        linearity: (ev[0] - ev[1]) / ev[0],
        planarity: (ev[1] - ev[2]) / ev[0],
        sphericity: ev[2] / ev[0],
    })
}

fn raw_descriptor(center: &Point3, neighbors: &[Point3], radius: f64) -> Option<[f64; GEOMETRIC_RAW_DIM]> {
    let shape = local_shape(neighbors)?;
    let n = neighbors.len() as f64;
    let mean_z = neighbors.iter().map(|p| p.z).sum::<f64>() / n;
    let spread = (neighbors.iter().map(|p| (p.z - mean_z).powi(2)).sum::<f64>() / n).sqrt() / radius;
    let mut shells = [0.0; SHELLS];
    for p in neighbors {
        let r = (p - center).norm() / radius;
        let k = ((r * SHELLS as f64) as usize).min(SHELLS - 1);
        shells[k] += 1.0 / n;
    }
    let mut out = [0.0; GEOMETRIC_RAW_DIM];
    out[..3].copy_from_slice(shape.normal.as_slice());
    out[3] = shape.linearity;
    out[4] = shape.planarity;
    out[5] = shape.sphericity;
    out[6] = spread;
    out[7..].copy_from_slice(&shells);
    Some(out)
}

/// Per-point local geometry descriptor on one hierarchy level, zero padded
/// to `dim` and L2-normalized. Rows whose radius neighborhood holds fewer
/// than three points, or no spread at all, are zero and flagged invalid.
pub fn point_descriptor(cloud: &HierarchicalCloud, level: usize, radius: f64, dim: usize) -> Result<FeatureMatrix> {
    if level >= cloud.num_levels() {
        return Err(Error::InvalidArgument(format!(
            "level {level} out of range (hierarchy has {})",
            cloud.num_levels()
        )));
    }
    if dim < GEOMETRIC_RAW_DIM {
        return Err(Error::DimensionMismatch {
            what: "geometric descriptor dim",
            expected: GEOMETRIC_RAW_DIM,
            got: dim,
        });
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("descriptor radius must be positive".into()));
    }
    let pts = cloud.points(level);
    let grid = SpatialGrid::new(pts, radius);
    let mut out = FeatureMatrix::zeros(FeatureRole::Point3d, pts.len(), dim);
    let mut scratch = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        scratch.clear();
        scratch.extend(grid.radius_neighbors(p, radius).into_iter().map(|j| pts[j]));
        match raw_descriptor(p, &scratch, radius) {
            Some(raw) => {
                let row = out.row_mut(i);
                row[..GEOMETRIC_RAW_DIM].copy_from_slice(&raw);
                normalize(row);
            }
            None => out.set_valid(i, false),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::sampling::build_hierarchy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eigen_oracle(points: &[Point3]) -> [f64; 3] {
        // independent route: characteristic polynomial roots of the covariance
        let n = points.len() as f64;
        let m = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
        let mut c = [[0.0; 3]; 3];
        for p in points {
            let d = p.coords - m;
            for r in 0..3 {
                for s in 0..3 {
                    c[r][s] += d[r] * d[s] / n;
                }
            }
        }
        let p1 = c[0][1].powi(2) + c[0][2].powi(2) + c[1][2].powi(2);
        let q = (c[0][0] + c[1][1] + c[2][2]) / 3.0;
        let p2 = (c[0][0] - q).powi(2) + (c[1][1] - q).powi(2) + (c[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        if p == 0.0 {
            return [q; 3];
        }
        let b = Matrix3::from_fn(|r, s| (c[r][s] - if r == s { q } else { 0.0 }) / p);
        let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    }

    fn plane_grid(n: usize, step: f64) -> Vec<Point3> {
        (0..n * n)
            .map(|k| Point3::new((k % n) as f64 * step, (k / n) as f64 * step, 0.0))
            .collect()
    }

    #[test]
    fn plane_is_planar() {
        let pts = plane_grid(11, 0.01);
        let shape = local_shape(&pts).unwrap();
        let oracle = eigen_oracle(&pts);
        for k in 0..3 {
            assert!((shape.eigenvalues[k] - oracle[k]).abs() < 1e-12);
        }
        assert!(oracle[2] / oracle[0] < 0.01);
        assert!(shape.planarity > 0.99);
        assert!(shape.linearity < 0.01);
        assert!((shape.normal - Vector3::z()).norm() < 1e-9);
    }

    #[test]
    fn line_is_linear() {
        let pts: Vec<_> = (0..20).map(|i| Point3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let shape = local_shape(&pts).unwrap();
        let oracle = eigen_oracle(&pts);
        assert!((shape.eigenvalues[0] - oracle[0]).abs() < 1e-12);
        assert!(shape.linearity > 0.99);
    }

    #[test]
    fn degenerate_neighborhoods() {
        assert!(local_shape(&[Point3::origin(); 2]).is_none());
        assert!(local_shape(&[Point3::origin(); 5]).is_none());
    }

    #[test]
    fn descriptor_rows_are_unit_or_invalid() {
        let mut pts = plane_grid(20, 0.02);
        pts.push(Point3::new(5.0, 5.0, 5.0));
        let h = build_hierarchy(&pts, 0.01, 2).unwrap();
        let f = point_descriptor(&h, 0, 0.06, 128).unwrap();
        assert_eq!(f.dim(), 128);
        let lonely = h.points(0).iter().position(|p| p.x > 4.0).unwrap();
        assert!(!f.is_valid(lonely));
        assert!(f.row(lonely).iter().all(|&x| x == 0.0));
        for i in (0..f.rows()).filter(|&i| i != lonely) {
            let n: f64 = f.row(i).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-9);
            assert!(f.row(i)[GEOMETRIC_RAW_DIM..].iter().all(|&x| x == 0.0));
        }
        assert!(point_descriptor(&h, 5, 0.06, 128).is_err());
    }

    #[test]
    fn eigen_features_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..60)
            .map(|i| Point3::new((i % 8) as f64 * 0.01, (i / 8) as f64 * 0.013, ((i * 7) % 5) as f64 * 0.002))
            .collect();
        let a = local_shape(&pts).unwrap();
        for _ in 0..10 {
            let t = RigidTransform::random(&mut rng, 2.0);
            let moved: Vec<_> = pts.iter().map(|p| t.apply(p)).collect();
            let b = local_shape(&moved).unwrap();
            assert!((a.linearity - b.linearity).abs() < 1e-6);
            assert!((a.planarity - b.planarity).abs() < 1e-6);
            assert!((a.sphericity - b.sphericity).abs() < 1e-6);
        }
    }
}
