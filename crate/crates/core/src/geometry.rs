//! Planar and spatial pose types plus the pinhole projection model.
//!
//! Planar convention: `theta = 0` faces `+x`, counterclockwise positive.
//! Every planar angle is wrapped into `(-pi, pi]` at construction.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the geometric primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {index} lies at non-positive camera depth {depth}")]
    NonPositiveDepth { index: usize, depth: f64 },
    #[error("rotation is not orthonormal with det +1 (deviation {0:e})")]
    NotARotation(f64),
    #[error("camera focal lengths must be positive (fx={fx}, fy={fy})")]
    InvalidIntrinsics { fx: f64, fy: f64 },
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Smallest signed difference `a - b` on the circle.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Planar pose `[x, y, theta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Unit vector along the heading.
    pub fn heading(&self) -> Vector2<f64> {
        Vector2::new(self.theta.cos(), self.theta.sin())
    }

    /// Rigid composition `self ∘ other`: `other` is expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -c * self.x - s * self.y,
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Maps a point given in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.position() - other.position()).norm()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Pose2 {
    type Output = Pose2;

    fn mul(self, rhs: Pose2) -> Pose2 {
        self.compose(&rhs)
    }
}

impl From<[f64; 3]> for Pose2 {
    fn from(a: [f64; 3]) -> Self {
        Pose2::new(a[0], a[1], a[2])
    }
}

impl From<Pose2> for [f64; 3] {
    fn from(p: Pose2) -> Self {
        p.to_array()
    }
}

/// World pose of a target seen by a sensor mounted at `sensor_offset` on a robot.
///
/// Computes `robot_world ∘ sensor_offset ∘ target_in_sensor`.
pub fn compose_to_world(robot_world: &Pose2, target_in_sensor: &Pose2, sensor_offset: &Pose2) -> Pose2 {
    robot_world.compose(sensor_offset).compose(target_in_sensor)
}

/// Rigid transform `X_c = R X_t + T` from a body frame into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl Pose3 {
    /// Builds a pose, rejecting matrices that are not proper rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det_dev = (rotation.determinant() - 1.0).abs();
        let worst = dev.max(det_dev);
        if worst > ROTATION_TOL || !worst.is_finite() {
            return Err(GeometryError::NotARotation(worst));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Re-orthonormalizes `rotation` through its polar decomposition before construction.
    pub fn from_approx_rotation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: nearest_rotation(&rotation),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Closest proper rotation in Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Rodrigues exponential map.
pub fn rotation_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let angle = w.norm();
    let k = skew(w);
    if angle < 1e-12 {
        return Matrix3::identity() + k;
    }
    let a = angle.sin() / angle;
    let b = (1.0 - angle.cos()) / (angle * angle);
    Matrix3::identity() + k * a + k * k * b
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rotation about the vertical axis.
pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Maps body-frame vectors (x forward, y left, z up) into the optical frame
/// (x right, y down, z forward).
pub fn body_to_optical() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics { fx, fy });
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, p: &PixelPoint) -> (f64, f64) {
        ((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Projects body-frame points through `pose` and `k`, dividing by the camera depth.
pub fn project_points(
    k: &CameraIntrinsics,
    pose: &Pose3,
    model_points: &[Vector3<f64>],
) -> Result<Vec<PixelPoint>, GeometryError> {
    model_points
        .iter()
        .enumerate()
        .map(|(index, x)| {
            let xc = pose.transform(x);
            if xc.z <= 0.0 {
                return Err(GeometryError::NonPositiveDepth { index, depth: xc.z });
            }
            Ok(PixelPoint::new(
                k.fx * xc.x / xc.z + k.cx,
                k.fy * xc.y / xc.z + k.cy,
            ))
        })
        .collect()
}
