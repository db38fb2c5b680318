//! Pinhole camera model, rotation representations and rigid transforms.
//!
//! Conventions used throughout the crate:
//! - camera frame: x right, y down, z forward (optical axis);
//! - a [`RigidPose`] maps body-frame points into the camera frame, `x_cam = R x_body + t`;
//! - [`NormalizedEuler`] stores intrinsic Z-Y-X angles as fractions of a full turn,
//!   `R = Rz(2π r[0]) · Ry(2π r[1]) · Rx(2π r[2])`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance for orthonormality and determinant checks on rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Pinhole intrinsics in pixels. No skew, no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!(
                "intrinsics must be finite with fx, fy > 0 (got fx={}, fy={}, cx={}, cy={})",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form inverse of [`Self::matrix`].
    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Back-projects a pixel to its unit-norm bearing vector `A⁻¹ [p, 1]ᵀ / ‖·‖`.
pub fn pixel_to_ray(k: &CameraIntrinsics, p: &Vec2) -> Result<Vec3> {
    k.validate()?;
    let v = Vec3::new((p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy, 1.0);
    Ok(v / v.norm())
}

pub fn project_point(k: &CameraIntrinsics, x: &Vec3) -> Result<Vec2> {
    if !(x.z > 0.0) {
        return Err(Error::BehindCamera { z: x.z });
    }
    Ok(Vec2::new(
        k.fx * x.x / x.z + k.cx,
        k.fy * x.y / x.z + k.cy,
    ))
}

/// A proper rotation: orthonormal with determinant +1 (within [`ROTATION_TOLERANCE`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    pub fn new(m: Mat3) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entries".into()));
        }
        let ortho = (m.transpose() * m - Mat3::identity()).amax();
        if ortho > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation(format!(
                "columns not orthonormal (max deviation {ortho:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation(format!("determinant {det}")));
        }
        Ok(Self(m))
    }

    /// Nearest rotation in the Frobenius sense (SVD projection onto SO(3)).
    pub fn orthonormalize(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("requested u");
        let v_t = svd.v_t.expect("requested v_t");
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * v_t)
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rodrigues formula; `axis_angle` is the rotation vector (axis · angle).
    pub fn from_axis_angle(axis_angle: &Vec3) -> Self {
        let theta = axis_angle.norm();
        if theta < 1e-15 {
            return Self(Mat3::identity() + skew(axis_angle));
        }
        let k = skew(&(axis_angle / theta));
        Self(Mat3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos()))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

pub(crate) fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Intrinsic Z-Y-X Euler angles as fractions of a full turn. 0 and 1 denote the same angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedEuler(pub [f64; 3]);

impl NormalizedEuler {
    pub fn new(r: [f64; 3]) -> Result<Self> {
        if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!(
                "normalized Euler components must lie in [0, 1], got {r:?}"
            )));
        }
        Ok(Self(r))
    }

    /// Wraps arbitrary turn fractions into `[0, 1)`.
    pub fn wrapped(r: [f64; 3]) -> Self {
        Self(r.map(wrap_unit))
    }

    pub fn angles(&self) -> [f64; 3] {
        self.0.map(|v| TAU * v)
    }
}

/// Maps a turn fraction into `[0, 1)`.
pub fn wrap_unit(v: f64) -> f64 {
    let w = v.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs.
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

pub fn euler_norm_to_matrix(r: &NormalizedEuler) -> RotationMatrix {
    let [z, y, x] = r.angles();
    RotationMatrix::about_z(z)
        .compose(&RotationMatrix::about_y(y))
        .compose(&RotationMatrix::about_x(x))
}

/// Inverse of [`euler_norm_to_matrix`], canonicalized to `[0, 1)`.
///
/// At gimbal lock (middle angle ±90°) the third angle is set to 0 and the first absorbs
/// the residual rotation.
pub fn matrix_to_euler_norm(rot: &RotationMatrix) -> NormalizedEuler {
    let m = rot.matrix();
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    let cos_pitch = m[(0, 0)].hypot(m[(1, 0)]);
    let (yaw, roll) = if cos_pitch > 1e-9 {
        (m[(1, 0)].atan2(m[(0, 0)]), m[(2, 1)].atan2(m[(2, 2)]))
    } else {
        ((-m[(0, 1)]).atan2(m[(1, 1)]), 0.0)
    };
    NormalizedEuler::wrapped([yaw / TAU, pitch / TAU, roll / TAU])
}

/// Normalized geodesic distance `arccos((tr(Rpᵀ Rg) − 1) / 2) / π` in `[0, 1]`.
pub fn relative_rotation_angle(pred: &RotationMatrix, gt: &RotationMatrix) -> f64 {
    let rel = pred.matrix().transpose() * gt.matrix();
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos.acos() / PI
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
}

impl RigidPose {
    pub fn new(rotation: RotationMatrix, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(RotationMatrix::identity(), Vec3::zeros())
    }

    pub fn from_euler(r: &NormalizedEuler, translation: Vec3) -> Self {
        Self::new(euler_norm_to_matrix(r), translation)
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }
}

pub fn transform_points(pose: &RigidPose, pts_body: &[Vec3]) -> Vec<Vec3> {
    pts_body.iter().map(|p| pose.transform(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Hamilton quaternion `[w, x, y, z]`, kept separate from the matrix code paths.
    type Quat = [f64; 4];

    fn q_axis(axis: [f64; 3], angle: f64) -> Quat {
        let (s, c) = (angle / 2.0).sin_cos();
        [c, axis[0] * s, axis[1] * s, axis[2] * s]
    }

    fn q_mul(a: Quat, b: Quat) -> Quat {
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ]
    }

    fn q_to_matrix(q: Quat) -> Mat3 {
        let [w, x, y, z] = q;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Geodesic angle between two unit quaternions, normalized by π.
    fn q_geodesic(a: Quat, b: Quat) -> f64 {
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        2.0 * dot.abs().min(1.0).acos() / PI
    }

    fn q_euler(r: [f64; 3]) -> Quat {
        q_mul(
            q_mul(q_axis([0.0, 0.0, 1.0], TAU * r[0]), q_axis([0.0, 1.0, 0.0], TAU * r[1])),
            q_axis([1.0, 0.0, 0.0], TAU * r[2]),
        )
    }

    fn k_hd() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0).unwrap()
    }

    #[test]
    fn ray_examples() {
        let v = pixel_to_ray(&k_hd(), &Vec2::new(960.0, 540.0)).unwrap();
        assert_relative_eq!(v, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);

        let v = pixel_to_ray(&k_hd(), &Vec2::new(1960.0, 540.0)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(v, Vec3::new(h, 0.0, h), epsilon = 1e-12);

        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let v = pixel_to_ray(&k, &Vec2::new(3.0, 4.0)).unwrap();
        assert_relative_eq!(v, Vec3::new(3.0, 4.0, 1.0) / 26f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn ray_rejects_singular_intrinsics() {
        let k = CameraIntrinsics {
            fx: 0.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        };
        assert!(matches!(
            pixel_to_ray(&k, &Vec2::new(1.0, 1.0)),
            Err(Error::Config(_))
        ));
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn inverse_matrix_matches_numeric_inverse() {
        let k = CameraIntrinsics::new(812.5, 790.0, 320.2, 241.7).unwrap();
        let inv = k.matrix().try_inverse().unwrap();
        assert_relative_eq!(k.inverse_matrix(), inv, epsilon = 1e-14);
    }

    #[test]
    fn projection_examples() {
        let p = project_point(&k_hd(), &Vec3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(p, Vec2::new(960.0, 540.0));
        let p = project_point(&k_hd(), &Vec3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(p, Vec2::new(1460.0, 540.0));
        assert!(matches!(
            project_point(&k_hd(), &Vec3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
        assert!(project_point(&k_hd(), &Vec3::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn euler_examples() {
        let id = euler_norm_to_matrix(&NormalizedEuler([0.0; 3]));
        assert_relative_eq!(*id.matrix(), Mat3::identity(), epsilon = 1e-15);
        let full = euler_norm_to_matrix(&NormalizedEuler([1.0; 3]));
        assert_relative_eq!(*full.matrix(), Mat3::identity(), epsilon = 1e-12);

        // First component drives the first rotation of the Z-Y-X sequence.
        let quarter = euler_norm_to_matrix(&NormalizedEuler([0.25, 0.0, 0.0]));
        let oracle = q_to_matrix(q_axis([0.0, 0.0, 1.0], PI / 2.0));
        assert_relative_eq!(*quarter.matrix(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn euler_matches_quaternion_composition() {
        let r = [0.13, 0.07, 0.91];
        let m = euler_norm_to_matrix(&NormalizedEuler(r));
        assert_relative_eq!(*m.matrix(), q_to_matrix(q_euler(r)), epsilon = 1e-12);
    }

    #[test]
    fn matrix_to_euler_examples() {
        assert_eq!(
            matrix_to_euler_norm(&RotationMatrix::identity()),
            NormalizedEuler([0.0; 3])
        );
        let r = matrix_to_euler_norm(&RotationMatrix::about_z(PI / 2.0));
        assert_relative_eq!(r.0[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(r.0[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.0[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gimbal_lock_resolves_with_zero_third_angle() {
        for (pitch, yaw, roll) in [(0.25, 0.1, 0.3), (0.75, 0.6, 0.05), (0.25, 0.0, 0.9)] {
            let rot = euler_norm_to_matrix(&NormalizedEuler([yaw, pitch, roll]));
            let r = matrix_to_euler_norm(&rot);
            assert_eq!(r.0[2], 0.0);
            assert_relative_eq!(r.0[1], pitch, epsilon = 1e-9);
            // Re-projection oracle: the canonical angles rebuild the same rotation.
            let back = euler_norm_to_matrix(&r);
            assert_relative_eq!(*back.matrix(), *rot.matrix(), epsilon = 1e-8);
        }
    }

    #[test]
    fn relative_angle_examples() {
        let rp = euler_norm_to_matrix(&NormalizedEuler([0.3, 0.1, 0.7]));
        assert_eq!(relative_rotation_angle(&rp, &rp), 0.0);
        for axis in [Vec3::x(), Vec3::y(), Vec3::new(1.0, 2.0, -0.5).normalize()] {
            let rg = rp.compose(&RotationMatrix::from_axis_angle(&(axis * PI)));
            assert_relative_eq!(relative_rotation_angle(&rp, &rg), 1.0, epsilon = 1e-7);
        }
        let rg = rp.compose(&RotationMatrix::about_z(PI / 2.0));
        assert_relative_eq!(relative_rotation_angle(&rp, &rg), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn transform_examples() {
        let pts = [Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()];
        assert_eq!(transform_points(&RigidPose::identity(), &pts), pts.to_vec());

        let shift = RigidPose::new(RotationMatrix::identity(), Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(shift.transform(&Vec3::zeros()), Vec3::new(0.0, 0.0, 5.0));

        let turn = RigidPose::new(RotationMatrix::about_z(PI / 2.0), Vec3::zeros());
        assert_relative_eq!(turn.transform(&Vec3::x()), Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn rotation_validation() {
        assert!(RotationMatrix::new(Mat3::identity() * 2.0).is_err());
        assert!(RotationMatrix::new(-Mat3::identity()).is_err());
        let r = RotationMatrix::orthonormalize(&(Mat3::identity() + Mat3::repeat(1e-3)));
        assert!(RotationMatrix::new(*r.matrix()).is_ok());
    }

    #[test]
    fn geodesic_agrees_with_quaternion_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a: [f64; 3] = rng.random();
            let b: [f64; 3] = rng.random();
            let got = relative_rotation_angle(
                &euler_norm_to_matrix(&NormalizedEuler(a)),
                &euler_norm_to_matrix(&NormalizedEuler(b)),
            );
            assert!((got - q_geodesic(q_euler(a), q_euler(b))).abs() < 1e-7);
        }
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0..1.0f64
    }

    proptest! {
        #[test]
        fn ray_is_unit_norm(px in -1e4..1e4f64, py in -1e4..1e4f64) {
            let v = pixel_to_ray(&k_hd(), &Vec2::new(px, py)).unwrap();
            prop_assert!((v.norm() - 1.0).abs() < 1e-9);
            prop_assert!(v.z > 0.0);
        }

        #[test]
        fn ray_is_parallel_to_projected_point(
            x in -5.0..5.0f64, y in -5.0..5.0f64, z in 0.1..50.0f64,
        ) {
            let p = Vec3::new(x, y, z);
            let v = pixel_to_ray(&k_hd(), &project_point(&k_hd(), &p).unwrap()).unwrap();
            prop_assert!(v.dot(&p.normalize()) >= 1.0 - 1e-9);
        }

        #[test]
        fn relative_angle_is_symmetric_and_bounded(
            a in [unit(), unit(), unit()], b in [unit(), unit(), unit()],
        ) {
            let ra = euler_norm_to_matrix(&NormalizedEuler(a));
            let rb = euler_norm_to_matrix(&NormalizedEuler(b));
            let ab = relative_rotation_angle(&ra, &rb);
            let ba = relative_rotation_angle(&rb, &ra);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn euler_wraps_per_component(
            r in [unit(), unit(), unit()], shift in [-3i32..3, -3i32..3, -3i32..3],
        ) {
            let shifted = [
                r[0] + f64::from(shift[0]),
                r[1] + f64::from(shift[1]),
                r[2] + f64::from(shift[2]),
            ];
            let a = euler_norm_to_matrix(&NormalizedEuler(r));
            let b = euler_norm_to_matrix(&NormalizedEuler::wrapped(shifted));
            prop_assert!((a.matrix() - b.matrix()).amax() < 1e-12);
        }

        #[test]
        fn euler_round_trip_away_from_gimbal_lock(
            yaw in unit(), pitch in -0.24..0.24f64, roll in unit(),
        ) {
            let rot = euler_norm_to_matrix(&NormalizedEuler::wrapped([yaw, pitch, roll]));
            let back = euler_norm_to_matrix(&matrix_to_euler_norm(&rot));
            prop_assert!((back.matrix() - rot.matrix()).amax() < 1e-6);
        }
    }
}
