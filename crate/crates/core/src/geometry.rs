//! Rigid transforms, pinhole projection, viewing caps and yaw helpers.
//!
//! Frames follow the usual robotics conventions: the global and body frames
//! are x-forward / y-left / z-up, the camera frame is x-right / y-down /
//! z-forward (optical axis).

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive camera depth {0}")]
    NonPositiveDepth(f64),
    #[error("horizontal displacement is degenerate (vertical-only move)")]
    DegenerateDirection,
    #[error("rotation is not orthonormal with det +1")]
    InvalidRotation,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid field-of-view cap: {0}")]
    InvalidCap(String),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; guard tiny negatives of -pi.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Position plus heading. The platform flies level, so heading alone fixes
/// the viewing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Self {
            position: [position.x, position.y, position.z],
            yaw: wrap_angle(yaw),
        }
    }

    pub fn pos(&self) -> Vec3 {
        Vec3::new(self.position[0], self.position[1], self.position[2])
    }

    /// Unit viewing direction `(cos yaw, sin yaw, 0)`.
    pub fn forward(&self) -> Vec3 {
        Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    pub fn with_yaw(&self, yaw: f64) -> Self {
        Self {
            position: self.position,
            yaw: wrap_angle(yaw),
        }
    }

    /// Body-in-global transform for a level body at this pose.
    pub fn body_transform(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw, self.pos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Rotation about +z by `yaw`, followed by translation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera-in-body extrinsic for a forward-looking optical axis mounted at
    /// `offset` in the body frame.
    pub fn forward_camera(offset: Vec3) -> Self {
        // Columns are the camera axes (right, down, forward) in body coordinates.
        let rotation = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        Self {
            rotation,
            translation: offset,
        }
    }
}

/// `(camera_in_body)^-1 * (body_in_global)^-1 * p`.
pub fn global_to_camera(p: &Vec3, body_pose: &RigidTransform, cam_extrinsic: &RigidTransform) -> Vec3 {
    cam_extrinsic.inverse().apply(&body_pose.inverse().apply(p))
}

/// Inverse of [`global_to_camera`].
pub fn camera_to_global(p_cam: &Vec3, body_pose: &RigidTransform, cam_extrinsic: &RigidTransform) -> Vec3 {
    body_pose.apply(&cam_extrinsic.apply(p_cam))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside image".into()));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn project_to_pixel(p_cam: &Vec3, k: &Intrinsics) -> Result<Pixel, GeometryError> {
    if p_cam.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(p_cam.z));
    }
    Ok(Pixel {
        u: k.fx * p_cam.x / p_cam.z + k.cx,
        v: k.fy * p_cam.y / p_cam.z + k.cy,
        depth: p_cam.z,
    })
}

/// Test helper: lifts a pixel with known depth back into the camera frame.
pub fn back_project(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Vec3 {
    Vec3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth)
}

/// Spherical cap of radius `d_max` and half-angle `half_angle` around the
/// viewing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovCap {
    pub d_max: f64,
    pub half_angle: f64,
}

impl FovCap {
    pub fn new(d_max: f64, half_angle: f64) -> Result<Self, GeometryError> {
        if !(d_max > 0.0) {
            return Err(GeometryError::InvalidCap("d_max must be positive".into()));
        }
        if !(half_angle > 0.0 && half_angle <= PI) {
            return Err(GeometryError::InvalidCap("half angle must lie in (0, pi]".into()));
        }
        Ok(Self { d_max, half_angle })
    }
}

pub fn fov_contains(viewer: &Pose, point: &Vec3, cap: &FovCap) -> bool {
    let offset = point - viewer.pos();
    let dist = offset.norm();
    if dist > cap.d_max {
        return false;
    }
    if dist == 0.0 {
        return true;
    }
    let cos = (offset.dot(&viewer.forward()) / dist).clamp(-1.0, 1.0);
    cos.acos() <= cap.half_angle
}

pub fn yaw_from(from: &Vec3, to: &Vec3) -> Result<f64, GeometryError> {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    if dx.hypot(dy) < 1e-9 {
        return Err(GeometryError::DegenerateDirection);
    }
    Ok(wrap_angle(dy.atan2(dx)))
}

/// Intrinsics plus mounting of the forward camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsic: RigidTransform,
}

impl Camera {
    pub fn project_global(&self, pose: &Pose, p: &Vec3) -> Result<Pixel, GeometryError> {
        let p_cam = global_to_camera(p, &pose.body_transform(), &self.extrinsic);
        project_to_pixel(&p_cam, &self.intrinsics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Rotation3, Vector4};
    use proptest::prelude::*;

    fn k() -> Intrinsics {
        Intrinsics {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    #[test]
    fn identity_transforms_are_noop() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        let id = RigidTransform::identity();
        assert_eq!(global_to_camera(&p, &id, &id), p);
    }

    #[test]
    fn camera_rotated_half_turn() {
        let cam = RigidTransform::from_yaw(PI, Vec3::zeros());
        let out = global_to_camera(&Vec3::new(1.0, 0.0, 0.0), &RigidTransform::identity(), &cam);
        assert_abs_diff_eq!(out, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn forward_camera_is_proper_rotation() {
        let cam = RigidTransform::forward_camera(Vec3::zeros());
        assert!(RigidTransform::new(*cam.rotation(), Vec3::zeros()).is_ok());
        // A point straight ahead of the body lands on the optical axis.
        let p = global_to_camera(&Vec3::new(2.0, 0.0, 0.0), &RigidTransform::identity(), &cam);
        assert_abs_diff_eq!(p, Vec3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
        // Left of the body is negative image x; up is negative image y.
        let p = global_to_camera(&Vec3::new(2.0, 1.0, 1.0), &RigidTransform::identity(), &cam);
        assert_abs_diff_eq!(p, Vec3::new(-1.0, -1.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert_eq!(
            RigidTransform::new(m, Vec3::zeros()),
            Err(GeometryError::InvalidRotation)
        );
    }

    #[test]
    fn projection_examples() {
        let px = project_to_pixel(&Vec3::new(0.0, 0.0, 2.0), &k()).unwrap();
        assert_eq!((px.u, px.v, px.depth), (320.0, 240.0, 2.0));
        let px = project_to_pixel(&Vec3::new(1.0, 0.0, 2.0), &k()).unwrap();
        assert_eq!((px.u, px.v, px.depth), (520.0, 240.0, 2.0));
        assert!(matches!(
            project_to_pixel(&Vec3::new(1.0, 0.0, 0.0), &k()),
            Err(GeometryError::NonPositiveDepth(_))
        ));
        assert!(project_to_pixel(&Vec3::new(1.0, 0.0, -1.0), &k()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(k().validate().is_ok());
        let mut bad = k();
        bad.cx = 640.0;
        assert!(bad.validate().is_err());
        bad = k();
        bad.fy = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fov_examples() {
        let cap = FovCap::new(5.0, 0.5).unwrap();
        let viewer = Pose::new(Vec3::zeros(), 0.0);
        assert!(!fov_contains(&viewer, &Vec3::new(5.001, 0.0, 0.0), &cap));
        assert!(fov_contains(&viewer, &Vec3::new(5.0, 0.0, 0.0), &cap));
        assert!(fov_contains(&viewer, &Vec3::zeros(), &cap));
        let off: f64 = 0.5 + 0.01;
        let p = Vec3::new(2.5 * off.cos(), 2.5 * off.sin(), 0.0);
        assert!(!fov_contains(&viewer, &p, &cap));
        let inside: f64 = 0.5 - 0.01;
        let p = Vec3::new(2.5 * inside.cos(), 2.5 * inside.sin(), 0.0);
        assert!(fov_contains(&viewer, &p, &cap));
    }

    #[test]
    fn yaw_examples() {
        let o = Vec3::zeros();
        assert_eq!(yaw_from(&o, &Vec3::new(1.0, 0.0, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(yaw_from(&o, &Vec3::new(0.0, 1.0, 0.0)).unwrap(), PI / 2.0);
        assert_abs_diff_eq!(
            yaw_from(&o, &Vec3::new(-1.0, -1.0, 0.0)).unwrap(),
            (-1.0f64).atan2(-1.0)
        );
        assert_abs_diff_eq!(yaw_from(&o, &Vec3::new(-1.0, -1.0, 0.0)).unwrap(), -3.0 * PI / 4.0);
        assert_eq!(
            yaw_from(&o, &Vec3::new(0.0, 0.0, 3.0)),
            Err(GeometryError::DegenerateDirection)
        );
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
    }

    fn rigid(roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> RigidTransform {
        let r = Rotation3::from_euler_angles(roll, pitch, yaw).into_inner();
        RigidTransform::new(r, Vec3::new(t[0], t[1], t[2])).unwrap()
    }

    fn angle() -> impl Strategy<Value = f64> {
        -PI..PI
    }

    fn coord() -> impl Strategy<Value = f64> {
        -50.0..50.0f64
    }

    proptest! {
        #[test]
        fn matches_homogeneous_oracle(
            a in (angle(), angle(), angle()), ta in (coord(), coord(), coord()),
            b in (angle(), angle(), angle()), tb in (coord(), coord(), coord()),
            p in (coord(), coord(), coord()),
        ) {
            let body = rigid(a.0, a.1, a.2, [ta.0, ta.1, ta.2]);
            let cam = rigid(b.0, b.1, b.2, [tb.0, tb.1, tb.2]);
            let p = Vec3::new(p.0, p.1, p.2);
            let hb = body.to_homogeneous().try_inverse().unwrap();
            let hc = cam.to_homogeneous().try_inverse().unwrap();
            let expected = hc * hb * Vector4::new(p.x, p.y, p.z, 1.0);
            let got = global_to_camera(&p, &body, &cam);
            for i in 0..3 {
                prop_assert!((got[i] - expected[i]).abs() < 1e-9);
            }
            let back = camera_to_global(&got, &body, &cam);
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn projection_round_trip(u in 0.0..640.0f64, v in 0.0..480.0f64, d in 0.01..100.0f64) {
            let px = project_to_pixel(&back_project(u, v, d, &k()), &k()).unwrap();
            prop_assert!((px.u - u).abs() < 1e-6);
            prop_assert!((px.v - v).abs() < 1e-6);
            prop_assert!((px.depth - d).abs() < 1e-6);
        }

        #[test]
        fn fov_monotone_in_radius_and_angle(
            p in (coord(), coord(), -3.0..3.0f64), yaw in angle(),
            d in 0.1..30.0f64, th in 0.05..3.0f64, dd in 0.0..10.0f64, dth in 0.0..0.1f64,
        ) {
            let viewer = Pose::new(Vec3::new(1.0, -2.0, 0.5), yaw);
            let pt = Vec3::new(p.0, p.1, p.2);
            let small = FovCap { d_max: d, half_angle: th };
            let big = FovCap { d_max: d + dd, half_angle: (th + dth).min(PI) };
            if fov_contains(&viewer, &pt, &small) {
                prop_assert!(fov_contains(&viewer, &pt, &big));
            }
        }
    }
}
