//! Frames, rotations, pinhole projection and interpolation primitives.
//!
//! Conventions used across the crate:
//!
//! * Agent body frames are forward-left-up (x forward, y left, z up).
//! * Euler angles are Z-Y-X (yaw, then pitch, then roll): `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//! * The front camera is mounted rolled so that its optical axis is body x, its
//!   image x axis points down and its image y axis points left. With this mounting a
//!   lateral baseline lies along the camera y axis, so a follower flying 3 m to the
//!   right of the leader sits at `(0, -3, 0)` in the leader's front-camera frame.
//! * Side cameras look across the formation: the leader's looks right, the
//!   follower's looks left. Both have image x horizontal and image y down.
//! * All angles are radians.

use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Unit-quaternion orientation. Euler angles are only used at API edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Z-Y-X Euler angles: yaw about z, then pitch about y, then roll about x.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self(UnitQuaternion::from_euler_angles(roll, pitch, yaw))
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self(q)
    }

    /// Nearest rotation to `m` (assumed close to orthonormal).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_eps(m, 1e-15, 100, nalgebra::Rotation3::identity());
        Self(UnitQuaternion::from_rotation_matrix(&rot))
    }

    /// Rotation whose columns are the given orthonormal axes.
    pub fn from_columns(x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>) -> Self {
        Self::from_matrix(&Matrix3::from_columns(&[x, y, z]))
    }

    pub fn from_scaled_axis(v: Vector3<f64>) -> Self {
        Self(UnitQuaternion::from_scaled_axis(v))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self(UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self(UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angle))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle))
    }

    /// Returns `(roll, pitch, yaw)`.
    pub fn euler(&self) -> (f64, f64, f64) {
        self.0.euler_angles()
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self * other`, renormalised.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self(UnitQuaternion::new_normalize(self.0.into_inner() * other.0.into_inner()))
    }

    /// Geodesic angle between two orientations.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.rotate(&rhs)
    }
}

/// Spherical linear interpolation along the shortest arc.
pub fn slerp(q0: &Rotation, q1: &Rotation, t: f64) -> Rotation {
    let a = q0.0.into_inner();
    let mut b = q1.0.into_inner();
    if a.coords.dot(&b.coords) < 0.0 {
        b = -b;
    }
    // angle between the 4-vectors from chord lengths; stays accurate for tiny arcs
    let theta = 2.0 * (a.coords - b.coords).norm().atan2((a.coords + b.coords).norm());
    let (w0, w1) = if theta < 1e-9 {
        (1.0 - t, t)
    } else {
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    let q = Quaternion::from(a.coords * w0 + b.coords * w1);
    Rotation(UnitQuaternion::new_normalize(q))
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation.compose(&other.rotation),
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose::new(r, -r.rotate(&self.translation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// 640x480 with a centred principal point.
    pub fn vga(focal: f64) -> Self {
        Self { fx: focal, fy: focal, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Normalised image-plane coordinates `(x, y, 1)` for a pixel.
    pub fn normalized(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.normalized(u, v) * depth
    }

    /// Raw pinhole projection without validity checks.
    pub fn project_raw(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// A pixel observation; `valid` is false when the point falls outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelObs {
    pub u: f64,
    pub v: f64,
    pub timestamp: f64,
    pub feature_id: u64,
    pub valid: bool,
}

impl PixelObs {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v, timestamp: 0.0, feature_id: 0, valid: true }
    }

    pub fn invalid() -> Self {
        Self { u: f64::NAN, v: f64::NAN, timestamp: 0.0, feature_id: 0, valid: false }
    }

    pub fn at(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.feature_id = id;
        self
    }

    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Projects a camera-frame point. The result is flagged invalid when it lands outside the image.
pub fn project(point: &Vector3<f64>, k: &CameraIntrinsics) -> Result<PixelObs, GeomError> {
    if !(point.z > 0.0) {
        return Err(GeomError::BehindCamera(point.z));
    }
    let px = k.project_raw(point);
    let mut obs = PixelObs::new(px.x, px.y);
    obs.valid = k.contains(px.x, px.y);
    Ok(obs)
}

/// Unit bearing in the anchor frame together with its cross-product matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingObs {
    pub bearing: Vector3<f64>,
    pub ortho: Matrix3<f64>,
}

impl BearingObs {
    /// Normalises `direction`; panics on a zero vector.
    pub fn new(direction: Vector3<f64>) -> Self {
        let bearing = Unit::new_normalize(direction).into_inner();
        Self { bearing, ortho: skew(&bearing) }
    }

    /// Bearing of a pixel seen by a camera whose orientation in the anchor frame is `anchor_r_cam`.
    pub fn from_pixel(u: f64, v: f64, k: &CameraIntrinsics, anchor_r_cam: &Rotation) -> Self {
        Self::new(anchor_r_cam.rotate(&k.normalized(u, v)))
    }
}

/// Fixed sensor mountings expressed as body-from-camera rotations.
pub mod mount {
    use super::Rotation;
    use nalgebra::Vector3;

    /// Front camera: optical axis forward, image x down, image y left.
    pub fn front_camera() -> Rotation {
        Rotation::from_columns(-Vector3::z(), Vector3::y(), Vector3::x())
    }

    /// Leader side camera, looking right (body -y).
    pub fn leader_side_camera() -> Rotation {
        Rotation::from_columns(-Vector3::x(), -Vector3::z(), -Vector3::y())
    }

    /// Follower side camera, looking left (body +y).
    pub fn follower_side_camera() -> Rotation {
        Rotation::from_columns(Vector3::x(), -Vector3::z(), Vector3::y())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn project_optical_axis_and_offset() {
        let k = CameraIntrinsics::vga(380.0);
        let p = project(&Vector3::new(0.0, 0.0, 10.0), &k).unwrap();
        assert_eq!((p.u, p.v), (320.0, 240.0));
        let p = project(&Vector3::new(1.0, 0.0, 10.0), &k).unwrap();
        assert_relative_eq!(p.u, 358.0, epsilon = 1e-12);
        assert_relative_eq!(p.v, 240.0, epsilon = 1e-12);
    }

    #[test]
    fn project_behind_camera_fails() {
        let k = CameraIntrinsics::vga(380.0);
        assert!(matches!(project(&Vector3::new(0.0, 0.0, -1.0), &k), Err(GeomError::BehindCamera(_))));
        assert!(project(&Vector3::new(0.0, 0.0, 0.0), &k).is_err());
    }

    #[test]
    fn project_flags_out_of_bounds() {
        let k = CameraIntrinsics::vga(380.0);
        let p = project(&Vector3::new(10.0, 0.0, 1.0), &k).unwrap();
        assert!(!p.valid);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(-1.0, 1.0, 320.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(380.0, 380.0, 700.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(380.0, 380.0, 320.0, 240.0, 640, 480).is_ok());
    }

    #[test]
    fn slerp_examples() {
        let q = Rotation::from_euler(0.1, -0.2, 0.3);
        assert!(slerp(&q, &q, 0.7).angle_to(&q) < 1e-12);
        let id = Rotation::identity();
        let z90 = Rotation::rot_z(FRAC_PI_2);
        assert!(slerp(&id, &z90, 0.5).angle_to(&Rotation::rot_z(FRAC_PI_2 / 2.0)) < 1e-12);
        assert!(slerp(&id, &z90, 1.0).angle_to(&z90) < 1e-12);
        assert!(slerp(&id, &z90, 0.0).angle_to(&id) < 1e-12);
    }

    #[test]
    fn slerp_takes_shortest_arc() {
        let a = Rotation::rot_z(0.0);
        // same orientation as rot_z(-0.2) but with the opposite quaternion sign
        let b = Rotation::from_quaternion(UnitQuaternion::new_unchecked(-*Rotation::rot_z(-0.2).quaternion().as_ref()));
        let mid = slerp(&a, &b, 0.5);
        assert!(mid.angle_to(&Rotation::rot_z(-0.1)) < 1e-12);
    }

    #[test]
    fn slerp_constant_angular_velocity() {
        let a = Rotation::from_euler(0.3, -0.4, 1.2);
        let b = Rotation::from_euler(-0.5, 0.2, -2.0);
        let d = 0.01;
        let first = slerp(&a, &b, 0.0).angle_to(&slerp(&a, &b, d));
        for i in 1..99 {
            let t = i as f64 * d;
            let step = slerp(&a, &b, t).angle_to(&slerp(&a, &b, t + d));
            assert!((step - first).abs() < 1e-9, "t={t}: {step} vs {first}");
        }
    }

    #[test]
    fn skew_identities() {
        let ex = Vector3::x();
        assert_relative_eq!(skew(&ex) * Vector3::y(), Vector3::z());
        let v = Vector3::new(0.3, -1.2, 2.5);
        assert_eq!(skew(&v) * v, Vector3::zeros());
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(wrap_angle(6.2), 6.2 - 2.0 * PI, epsilon = 1e-15);
    }

    #[test]
    fn mountings_are_proper_rotations() {
        for r in [mount::front_camera(), mount::leader_side_camera(), mount::follower_side_camera()] {
            assert_relative_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-12);
        }
        // follower 3 m to the right appears at (0, -3, 0) in the leader's front camera
        let cam_from_body = mount::front_camera().inverse();
        assert_relative_eq!(cam_from_body.rotate(&Vector3::new(0.0, -3.0, 0.0)), Vector3::new(0.0, -3.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(cam_from_body.rotate(&Vector3::new(30.0, 0.0, 0.0)), Vector3::new(0.0, 0.0, 30.0), epsilon = 1e-12);
        // leader's side camera looks along body -y
        let side = mount::leader_side_camera().inverse();
        assert_relative_eq!(side.rotate(&Vector3::new(0.0, -3.0, 0.0)), Vector3::new(0.0, 0.0, 3.0), epsilon = 1e-14);
    }

    #[test]
    fn bearing_ortho_annihilates() {
        let b = BearingObs::new(Vector3::new(0.2, -0.4, 1.0));
        assert!((b.ortho * b.bearing).norm() < 1e-12);
        assert_relative_eq!(b.ortho.transpose(), -b.ortho);
        assert_relative_eq!(b.bearing.norm(), 1.0, epsilon = 1e-15);
    }

    fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn skew_matches_cross_product(v in vec3(10.0), w in vec3(10.0)) {
            let by_hand = Vector3::new(v.y * w.z - v.z * w.y, v.z * w.x - v.x * w.z, v.x * w.y - v.y * w.x);
            prop_assert!((skew(&v) * w - by_hand).norm() < 1e-12);
        }

        #[test]
        fn euler_round_trip(roll in -3.1f64..3.1, pitch in -1.55f64..1.55, yaw in -3.1f64..3.1) {
            let r = Rotation::from_euler(roll, pitch, yaw);
            prop_assert!((r.quaternion().norm() - 1.0).abs() < 1e-12);
            let (r2, p2, y2) = r.euler();
            prop_assert!((wrap_angle(r2 - roll)).abs() < 1e-9);
            prop_assert!((wrap_angle(p2 - pitch)).abs() < 1e-9);
            prop_assert!((wrap_angle(y2 - yaw)).abs() < 1e-9);
            // Z-Y-X composition order
            let m = Rotation::rot_z(yaw).matrix() * Rotation::rot_y(pitch).matrix() * Rotation::rot_x(roll).matrix();
            prop_assert!((r.matrix() - m).norm() < 1e-12);
        }

        #[test]
        fn pose_inverse_composes_to_identity(a in vec3(3.0), t in vec3(50.0)) {
            let p = Pose::new(Rotation::from_scaled_axis(a), t);
            let id = p.compose(&p.inverse());
            prop_assert!(id.translation.norm() < 1e-12);
            prop_assert!(id.rotation.angle_to(&Rotation::identity()) < 1e-7);
            prop_assert!((id.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
        }

        #[test]
        fn rotation_composition_is_associative(a in vec3(3.0), b in vec3(3.0), c in vec3(3.0)) {
            let (a, b, c) = (Rotation::from_scaled_axis(a), Rotation::from_scaled_axis(b), Rotation::from_scaled_axis(c));
            let lhs = (a * b) * c;
            let rhs = a * (b * c);
            prop_assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-12);
        }

        #[test]
        fn project_unproject_round_trip(x in -5.0f64..5.0, y in -4.0f64..4.0, z in 0.5f64..80.0) {
            let k = CameraIntrinsics::vga(380.0);
            let p = Vector3::new(x, y, z);
            let obs = project(&p, &k).unwrap();
            let back = k.unproject(obs.u, obs.v, z);
            prop_assert!((back - p).norm() < 1e-10 * (1.0 + p.norm()));
        }
    }
}
