// SPDX-License-Identifier: Apache-2.0

//! Shared geometric types and the pinhole camera model.
//!
//! Frame conventions:
//!
//! * camera: +z forward, +x right, +y down
//! * radar / ego: +x forward, +y left, +z up
//!
//! Depth values are z-depth in the camera frame, never ray length. Pixel
//! coordinates are continuous with integer values at pixel centers, so pixel
//! `(col, row)` sits at `(u, v) = (col, row)`.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Points closer than this to the camera plane are treated as behind it.
pub const MIN_PROJECT_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("pixel ({u}, {v}) is outside the {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("point with z = {0} is behind the camera")]
    BehindCamera(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Mat3::identity(), translation)
    }

    /// Rotation about `axis` by `angle` radians, followed by `translation`.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rot = if axis.norm() > 0.0 {
            Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
        } else {
            Rotation3::identity()
        };
        Self::new(*rot.matrix(), translation)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self::new(*q.to_rotation_matrix().matrix(), translation)
    }

    /// Yaw (about +z) followed by translation; the common planar ego pose.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        Self::from_axis_angle(Vec3::z(), yaw, translation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotate a direction or velocity (no translation).
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
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

    /// `RᵀR = I` and `det R = 1`, both within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Mat3::identity()).amax();
        ortho <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Parses a row-major homogeneous matrix. The bottom row must be
    /// `[0 0 0 1]` and the rotation block proper within `1e-6`.
    pub fn from_row_major(m: &[f64; 16]) -> Option<RigidTransform> {
        if m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return None;
        }
        let rotation = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let t = RigidTransform::new(rotation, Vec3::new(m[3], m[7], m[11]));
        t.is_proper(1e-6).then_some(t)
    }

    /// Translation by linear interpolation, rotation by slerp.
    pub fn interpolate(&self, other: &RigidTransform, alpha: f64) -> RigidTransform {
        let (q0, q1) = (self.quaternion(), other.quaternion());
        // antipodal rotations have no unique geodesic; snap to the nearer end
        let q = q0
            .try_slerp(&q1, alpha, 1e-12)
            .unwrap_or(if alpha < 0.5 { q0 } else { q1 });
        let t = self.translation * (1.0 - alpha) + other.translation * alpha;
        RigidTransform::from_quaternion(&q, t)
    }
}

/// Pinhole camera with an explicit ego→camera extrinsic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub cam_from_ego: RigidTransform,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        cam_from_ego: RigidTransform,
    ) -> Result<Self, CameraError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            cam_from_ego,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        if !self.cam_from_ego.is_proper(1e-9) {
            return Err(CameraError::InvalidIntrinsics(
                "cam_from_ego rotation is not proper".into(),
            ));
        }
        Ok(())
    }

    /// Forward-looking camera mounted at `position` (ego frame), optical axis
    /// along ego +x.
    pub fn forward_facing(
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
        position: Vec3,
    ) -> Result<Self, CameraError> {
        let rot = Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let cam_from_ego = RigidTransform::new(rot, -(rot * position));
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            cam_from_ego,
        )
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Result<Vec3, CameraError> {
        if !self.contains(u, v) {
            return Err(CameraError::OutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        if !(depth > 0.0) {
            return Err(CameraError::NonPositiveDepth(depth));
        }
        Ok(Vec3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        ))
    }

    pub fn project(&self, p: &Vec3) -> Result<(f64, f64), CameraError> {
        if !(p.z > MIN_PROJECT_DEPTH) {
            return Err(CameraError::BehindCamera(p.z));
        }
        Ok((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Unit ray direction (camera frame) through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }

    pub fn ego_from_cam(&self) -> RigidTransform {
        self.cam_from_ego.inverse()
    }
}
