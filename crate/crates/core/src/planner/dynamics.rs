//! Prediction models for the shooting problem.

use nalgebra::{Matrix3, Matrix3x2, SMatrix, Vector2, Vector3};

use crate::geometry::Pose2;

pub type Matrix5 = SMatrix<f64, 5, 5>;

/// Discrete-time model `x+ = f(x, u)` with first and second derivatives.
///
/// States are `[x, y, theta]` with `theta` left unwrapped inside the solver.
pub trait Dynamics {
    fn step(&self, x: &Vector3<f64>, u: &Vector2<f64>, dt: f64) -> Vector3<f64>;

    /// `(df/dx, df/du)`.
    fn jacobians(&self, x: &Vector3<f64>, u: &Vector2<f64>, dt: f64) -> (Matrix3<f64>, Matrix3x2<f64>);

    /// `sum_i weights[i] * d2 f_i / d(x, u)^2`, ordered `(x, y, theta, v, omega)`.
    fn weighted_hessian(&self, x: &Vector3<f64>, u: &Vector2<f64>, dt: f64, weights: &Vector3<f64>) -> Matrix5;
}

/// Forward-Euler differential-drive (unicycle) model.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unicycle;

impl Dynamics for Unicycle {
    fn step(&self, x: &Vector3<f64>, u: &Vector2<f64>, dt: f64) -> Vector3<f64> {
        let (s, c) = x.z.sin_cos();
        Vector3::new(x.x + dt * u.x * c, x.y + dt * u.x * s, x.z + dt * u.y)
    }

    fn jacobians(&self, x: &Vector3<f64>, u: &Vector2<f64>, dt: f64) -> (Matrix3<f64>, Matrix3x2<f64>) {
        let (s, c) = x.z.sin_cos();
        let a = Matrix3::new(1.0, 0.0, -dt * u.x * s, 0.0, 1.0, dt * u.x * c, 0.0, 0.0, 1.0);
        let b = Matrix3x2::new(dt * c, 0.0, dt * s, 0.0, 0.0, dt);
        (a, b)
    }

    fn weighted_hessian(&self, x: &Vector3<f64>, u: &Vector2<f64>, dt: f64, w: &Vector3<f64>) -> Matrix5 {
        let (s, c) = x.z.sin_cos();
        let mut h = Matrix5::zeros();
        h[(2, 2)] = -dt * u.x * (w.x * c + w.y * s);
        let tv = dt * (-w.x * s + w.y * c);
        h[(2, 3)] = tv;
        h[(3, 2)] = tv;
        h
    }
}

/// Linear model `x+ = A x + B u`; `dt` is ignored. Used to check the solver
/// against closed-form least squares.
#[derive(Debug, Clone, Copy)]
pub struct LinearDynamics {
    pub a: Matrix3<f64>,
    pub b: Matrix3x2<f64>,
}

impl Dynamics for LinearDynamics {
    fn step(&self, x: &Vector3<f64>, u: &Vector2<f64>, _dt: f64) -> Vector3<f64> {
        self.a * x + self.b * u
    }

    fn jacobians(&self, _x: &Vector3<f64>, _u: &Vector2<f64>, _dt: f64) -> (Matrix3<f64>, Matrix3x2<f64>) {
        (self.a, self.b)
    }

    fn weighted_hessian(&self, _x: &Vector3<f64>, _u: &Vector2<f64>, _dt: f64, _w: &Vector3<f64>) -> Matrix5 {
        Matrix5::zeros()
    }
}

/// One forward-Euler unicycle step on a planar pose.
pub fn dd_step(x: &Pose2, u: (f64, f64), dt: f64) -> Pose2 {
    let (v, w) = u;
    let (s, c) = x.theta().sin_cos();
    Pose2::new(x.x + dt * v * c, x.y + dt * v * s, x.theta() + dt * w)
}
