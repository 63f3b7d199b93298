//! Rigid transforms, pinhole projection and the weighted Kabsch solver.
//!
//! Transforms act on column vectors: `apply(t, p) = R·p + t`. Camera
//! extrinsics map the cloud frame into the camera frame (x right, y down,
//! z forward).

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Orthonormality / determinant tolerance for validated rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform after checking `RᵀR = I` and `det R = +1`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("rigid transform"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "rotation is not in SO(3) (orthogonality error {ortho:e}, det {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        let rotation = *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix();
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation_z(angle: f64, translation: Vector3<f64>) -> Self {
        Self::from_axis_angle(Vector3::z(), angle, translation)
    }

    /// Uniformly distributed rotation with translation drawn from
    /// `[-max_translation, max_translation]³`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_translation: f64) -> Self {
        let q = nalgebra::Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let rotation = *UnitQuaternion::from_quaternion(q)
            .to_rotation_matrix()
            .matrix();
        let translation = Vector3::from_fn(|_, _| {
            rng.random_range(-max_translation..=max_translation)
        });
        Self {
            rotation,
            translation,
        }
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidArgument(format!(
                "homogeneous bottom row must be (0, 0, 0, 1), got {bottom:?}"
            )));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Origin of the target frame expressed in the source frame, `-Rᵀt`.
    /// For a cloud→camera extrinsic this is the camera center in the cloud.
    pub fn source_origin_of_target(&self) -> Point3 {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }
}

pub fn apply(t: &RigidTransform, p: &Point3) -> Point3 {
    t.apply(p)
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Geodesic rotation distance in degrees.
pub fn rotation_error(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let r = a.rotation.transpose() * b.rotation;
    let cos = (r.trace() - 1.0) / 2.0;
    let sin = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    sin.atan2(cos).to_degrees()
}

pub fn translation_error(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.translation - b.translation).norm()
}

/// Weighted least-squares rigid alignment of `src` onto `dst`.
///
/// Minimizes `Σ wᵢ‖R·srcᵢ + t − dstᵢ‖²`. The reflection case is resolved by
/// flipping the singular vector of the smallest singular value.
pub fn kabsch(src: &[Point3], dst: &[Point3], weights: &[f64]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            what: "kabsch destination points",
            expected: src.len(),
            got: dst.len(),
        });
    }
    if weights.len() != src.len() {
        return Err(Error::DimensionMismatch {
            what: "kabsch weights",
            expected: src.len(),
            got: weights.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::DegenerateConfiguration("fewer than 3 point pairs"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "kabsch weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateConfiguration("total weight is zero"));
    }

    let mut src_mean = Vector3::zeros();
    let mut dst_mean = Vector3::zeros();
    for ((p, q), w) in src.iter().zip(dst).zip(weights) {
        src_mean += *w * p.coords;
        dst_mean += *w * q.coords;
    }
    src_mean /= total;
    dst_mean /= total;

    let mut cov = Matrix3::zeros();
    for ((p, q), w) in src.iter().zip(dst).zip(weights) {
        cov += *w * (p.coords - src_mean) * (q.coords - dst_mean).transpose();
    }
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("kabsch input"));
    }

    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    // rank < 2 leaves the rotation about the remaining axis undetermined
    if sv[0] <= f64::MIN_POSITIVE || sv[1] <= 1e-10 * sv[0] {
        return Err(Error::DegenerateConfiguration(
            "points are collinear or coincident",
        ));
    }
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = dst_mean - rotation * src_mean;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Weighted sum of squared residuals `Σ wᵢ‖T·srcᵢ − dstᵢ‖²`.
pub fn weighted_residual(t: &RigidTransform, src: &[Point3], dst: &[Point3], weights: &[f64]) -> f64 {
    src.iter()
        .zip(dst)
        .zip(weights)
        .map(|((p, q), w)| w * (t.apply(p) - q).norm_squared())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl PixelCoord {
    /// Integer pixel containing this coordinate (pixel `i` spans `[i, i+1)`).
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.floor() as usize, self.v.floor() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsic: Matrix3<f64>,
    pub extrinsic: RigidTransform,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(
        intrinsic: Matrix3<f64>,
        extrinsic: RigidTransform,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if !(intrinsic[(0, 0)] > 0.0 && intrinsic[(1, 1)] > 0.0) {
            return Err(Error::InvalidArgument(
                "camera focal lengths must be positive".into(),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(
                "camera width and height must be positive".into(),
            ));
        }
        if !intrinsic.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("camera intrinsic"));
        }
        Ok(Self {
            intrinsic,
            extrinsic,
            width,
            height,
        })
    }

    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
    }

    pub fn fx(&self) -> f64 {
        self.intrinsic[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsic[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsic[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsic[(1, 2)]
    }

    /// Camera center in the cloud frame.
    pub fn center(&self) -> Point3 {
        self.extrinsic.source_origin_of_target()
    }

    /// Projects a cloud-frame point, `u ~ K·(R·p + t)`. Returns `None` behind
    /// the camera or outside `[0, width) × [0, height)`.
    pub fn project(&self, p: &Point3) -> Option<PixelCoord> {
        let pc = self.extrinsic.apply(p);
        if !(pc.z > 0.0) {
            return None;
        }
        let h = self.intrinsic * pc.coords;
        let u = h.x / h.z;
        let v = h.y / h.z;
        let inside = u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64;
        inside.then_some(PixelCoord { u, v, depth: pc.z })
    }

    /// Camera-frame point on the ray through `(u, v)` at the given depth.
    pub fn unproject_camera(&self, px: &PixelCoord) -> Point3 {
        let inv = self
            .intrinsic
            .try_inverse()
            .expect("intrinsic with positive focal lengths is invertible");
        let ray = inv * Vector3::new(px.u, px.v, 1.0);
        Point3::from(ray * (px.depth / ray.z))
    }

    pub fn unproject(&self, px: &PixelCoord) -> Point3 {
        self.extrinsic.inverse().apply(&self.unproject_camera(px))
    }
}

pub fn project(cam: &CameraModel, p: &Point3) -> Option<PixelCoord> {
    cam.project(p)
}
