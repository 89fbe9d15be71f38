//! Barrier functions and their derivatives.
//!
//! `h_ob` keeps the robot outside a disc around an obstacle, `h_view` keeps
//! the target inside a cone around the robot heading. Both are used through
//! the discrete constraint `h(x_{k+1}) - h(x_k) + decay * h(x_k) >= 0`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::{Obstacle, PlanError};
use crate::geometry::Pose2;

/// Squared distance to the obstacle minus `d_safe^2`.
pub fn h_obstacle(x: &Pose2, ob: &Obstacle, d_safe: f64) -> f64 {
    let dx = x.x - ob.center[0];
    let dy = x.y - ob.center[1];
    dx * dx + dy * dy - d_safe * d_safe
}

/// `e_t . e_r - cos(theta_max)` for the unit vectors to the target and along the heading.
pub fn h_view(x: &Pose2, p_tar: [f64; 2], theta_max: f64) -> Result<f64, PlanError> {
    let d = Vector2::new(p_tar[0] - x.x, p_tar[1] - x.y);
    let r = d.norm();
    if r <= 1e-6 {
        return Err(PlanError::TargetCoincident);
    }
    Ok(d.dot(&x.heading()) / r - theta_max.cos())
}

/// Residual of the discrete barrier condition; satisfied iff non-negative.
pub fn cbf_residual(h_now: f64, h_next: f64, decay: f64) -> f64 {
    h_next - h_now + decay * h_now
}

/// Value, gradient and Hessian (over `[x, y, theta]`) of `h_ob`.
pub fn obstacle_terms(x: &Vector3<f64>, center: &Vector2<f64>, d_safe: f64) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let dx = x.x - center.x;
    let dy = x.y - center.y;
    let h = dx * dx + dy * dy - d_safe * d_safe;
    let g = Vector3::new(2.0 * dx, 2.0 * dy, 0.0);
    let mut hess = Matrix3::zeros();
    hess[(0, 0)] = 2.0;
    hess[(1, 1)] = 2.0;
    (h, g, hess)
}

/// Value, gradient and Hessian (over `[x, y, theta]`) of `h_view`.
///
/// Callers guarantee the target is not at the robot position.
pub fn view_terms(x: &Vector3<f64>, target: &Vector2<f64>, cos_max: f64) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let d = target - Vector2::new(x.x, x.y);
    let r2 = d.norm_squared().max(1e-24);
    let r = r2.sqrt();
    let r3 = r2 * r;
    let (s, c) = x.z.sin_cos();
    let e = Vector2::new(c, s);
    let e_perp = Vector2::new(-s, c);
    let de = d.dot(&e);
    let dp = d.dot(&e_perp);

    let h = de / r - cos_max;
    // d/dd of (d.e)/r; position gradient is its negative.
    let grad_d = e / r - d * (de / r3);
    let g = Vector3::new(-grad_d.x, -grad_d.y, dp / r);

    let hess_dd: Matrix2<f64> = -(e * d.transpose() + d * e.transpose()) / r3 - Matrix2::identity() * (de / r3)
        + d * d.transpose() * (3.0 * de / (r3 * r2));
    let cross_d = e_perp / r - d * (dp / r3);
    let mut hess = Matrix3::zeros();
    hess.fixed_view_mut::<2, 2>(0, 0).copy_from(&hess_dd);
    hess[(0, 2)] = -cross_d.x;
    hess[(1, 2)] = -cross_d.y;
    hess[(2, 0)] = -cross_d.x;
    hess[(2, 1)] = -cross_d.y;
    hess[(2, 2)] = -de / r;
    (h, g, hess)
}
