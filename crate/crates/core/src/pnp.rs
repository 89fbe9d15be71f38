//! Long-range trolley pose from six image keypoints.
//!
//! The pipeline is EPnP for the initial pose, damped Gauss-Newton on the
//! pixel reprojection error, reduction to a planar pose, and a gate-then-blend
//! filter that holds the last estimate while the trolley is out of view.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, SVector, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    angle_diff, body_to_optical, rotation_exp, skew, CameraIntrinsics, PixelPoint, Pose2, Pose3,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("degenerate keypoint configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no EPnP candidate places the points in front of the camera")]
    NoValidSolution,
    #[error("reprojection refinement diverged after {0} rejected steps")]
    DivergedRefinement(usize),
    #[error("invalid keypoint set: {0}")]
    InvalidKeypoints(String),
}

/// Six-point trolley template in the trolley body frame.
///
/// Origin at the backplane center, `x` pointing from the backplane into the
/// trolley, `z` up. The first four points are the backplane corners, the last
/// two the ends of the front handle bar.
pub fn default_keypoint_template() -> Vec<Vector3<f64>> {
    vec![
        Vector3::new(0.0, 0.25, 0.25),
        Vector3::new(0.0, -0.25, 0.25),
        Vector3::new(0.0, 0.25, -0.25),
        Vector3::new(0.0, -0.25, -0.25),
        Vector3::new(0.9, 0.3, 0.35),
        Vector3::new(0.9, -0.3, 0.35),
    ]
}

/// 2D-3D keypoint correspondences for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub image_points: Vec<PixelPoint>,
    pub model_points: Vec<[f64; 3]>,
    pub visibility: Vec<bool>,
}

impl KeypointSet {
    pub fn new(
        image_points: Vec<PixelPoint>,
        model_points: Vec<Vector3<f64>>,
        visibility: Vec<bool>,
    ) -> Result<Self, PnpError> {
        if image_points.len() != model_points.len() || visibility.len() != model_points.len() {
            return Err(PnpError::InvalidKeypoints(format!(
                "length mismatch: {} image, {} model, {} visibility",
                image_points.len(),
                model_points.len(),
                visibility.len()
            )));
        }
        for i in 0..model_points.len() {
            for j in (i + 1)..model_points.len() {
                if (model_points[i] - model_points[j]).norm() < 1e-9 {
                    return Err(PnpError::InvalidKeypoints(format!(
                        "model points {i} and {j} coincide"
                    )));
                }
            }
        }
        if image_points.iter().any(|p| !(p.u.is_finite() && p.v.is_finite())) {
            return Err(PnpError::InvalidKeypoints("non-finite pixel".into()));
        }
        Ok(Self {
            image_points,
            model_points: model_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            visibility,
        })
    }

    /// All points visible.
    pub fn all_visible(image_points: Vec<PixelPoint>, model_points: Vec<Vector3<f64>>) -> Result<Self, PnpError> {
        let n = model_points.len();
        Self::new(image_points, model_points, vec![true; n])
    }

    fn visible(&self) -> (Vec<Vector3<f64>>, Vec<PixelPoint>) {
        self.model_points
            .iter()
            .zip(&self.image_points)
            .zip(&self.visibility)
            .filter(|(_, &vis)| vis)
            .map(|((m, p), _)| (Vector3::new(m[0], m[1], m[2]), *p))
            .unzip()
    }
}

/// Sum of squared pixel residuals over the visible points.
pub fn reprojection_residual(pose: &Pose3, kps: &KeypointSet, k: &CameraIntrinsics) -> f64 {
    let (world, image) = kps.visible();
    world
        .iter()
        .zip(&image)
        .map(|(x, p)| {
            let xc = pose.transform(x);
            let du = k.fx * xc.x / xc.z + k.cx - p.u;
            let dv = k.fy * xc.y / xc.z + k.cy - p.v;
            du * du + dv * dv
        })
        .sum()
}

// Relative eigenvalue floor below which the model points are treated as flat.
const FLATNESS_TOL: f64 = 1e-8;
const BETA_GN_ITERS: usize = 10;

/// EPnP with centroid + principal-axis control points.
pub fn solve_epnp(kps: &KeypointSet, k: &CameraIntrinsics) -> Result<Pose3, PnpError> {
    let (world, image) = kps.visible();
    let n = world.len();
    if n < 4 {
        return Err(PnpError::DegenerateConfiguration(format!(
            "{n} visible points, at least 4 required"
        )));
    }

    let centroid = world.iter().sum::<Vector3<f64>>() / n as f64;
    let cov = world.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]];
    let lmin = eig.eigenvalues[order[2]];
    if lmax <= 0.0 || lmin <= FLATNESS_TOL * lmax {
        return Err(PnpError::DegenerateConfiguration(
            "visible model points are coplanar or collinear".into(),
        ));
    }

    let mut ctrl_world = [centroid; 4];
    for (j, &idx) in order.iter().enumerate() {
        let scale = (eig.eigenvalues[idx] / n as f64).sqrt();
        ctrl_world[j + 1] = centroid + eig.eigenvectors.column(idx) * scale;
    }
    let basis = Matrix3::from_columns(&[
        ctrl_world[1] - centroid,
        ctrl_world[2] - centroid,
        ctrl_world[3] - centroid,
    ]);
    let basis_inv = basis
        .try_inverse()
        .ok_or_else(|| PnpError::DegenerateConfiguration("singular control basis".into()))?;
    let alphas: Vec<[f64; 4]> = world
        .iter()
        .map(|p| {
            let a = basis_inv * (p - centroid);
            [1.0 - a.x - a.y - a.z, a.x, a.y, a.z]
        })
        .collect();

    let mut m = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (a, px)) in alphas.iter().zip(&image).enumerate() {
        let (xn, yn) = k.normalize(px);
        for j in 0..4 {
            m[(2 * i, 3 * j)] = a[j];
            m[(2 * i, 3 * j + 2)] = -a[j] * xn;
            m[(2 * i + 1, 3 * j + 1)] = a[j];
            m[(2 * i + 1, 3 * j + 2)] = -a[j] * yn;
        }
    }
    let mtm = m.transpose() * &m;
    let eig12 = SymmetricEigen::new(mtm);
    let mut idx: Vec<usize> = (0..12).collect();
    idx.sort_by(|&a, &b| eig12.eigenvalues[a].total_cmp(&eig12.eigenvalues[b]));
    let kernel: [SVector<f64, 12>; 4] =
        std::array::from_fn(|q| SVector::<f64, 12>::from_iterator(eig12.eigenvectors.column(idx[q]).iter().copied()));

    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let mut l = SMatrix::<f64, 6, 10>::zeros();
    let mut rho = SVector::<f64, 6>::zeros();
    for (r, &(a, b)) in pairs.iter().enumerate() {
        let dv: [Vector3<f64>; 4] = std::array::from_fn(|q| {
            Vector3::new(
                kernel[q][3 * a] - kernel[q][3 * b],
                kernel[q][3 * a + 1] - kernel[q][3 * b + 1],
                kernel[q][3 * a + 2] - kernel[q][3 * b + 2],
            )
        });
        let row = [
            dv[0].dot(&dv[0]),
            2.0 * dv[0].dot(&dv[1]),
            dv[1].dot(&dv[1]),
            2.0 * dv[0].dot(&dv[2]),
            2.0 * dv[1].dot(&dv[2]),
            dv[2].dot(&dv[2]),
            2.0 * dv[0].dot(&dv[3]),
            2.0 * dv[1].dot(&dv[3]),
            2.0 * dv[2].dot(&dv[3]),
            dv[3].dot(&dv[3]),
        ];
        for (c, v) in row.iter().enumerate() {
            l[(r, c)] = *v;
        }
        rho[r] = (ctrl_world[a] - ctrl_world[b]).norm_squared();
    }

    let mut best: Option<(f64, Pose3)> = None;
    for betas in [betas_approx_4(&l, &rho), betas_approx_2(&l, &rho), betas_approx_3(&l, &rho)] {
        let Some(betas) = betas else { continue };
        let betas = refine_betas(&l, &rho, betas);
        let Some(pose) = pose_from_betas(&kernel, &betas, &alphas, &world) else {
            continue;
        };
        let err = reprojection_residual(&pose, kps, k);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, p)| p).ok_or(PnpError::NoValidSolution)
}

fn lstsq_cols(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>, cols: &[usize]) -> Option<DVector<f64>> {
    let sub = DMatrix::from_fn(6, cols.len(), |r, c| l[(r, cols[c])]);
    let rhs = DVector::from_iterator(6, rho.iter().copied());
    sub.svd(true, true).solve(&rhs, 1e-14).ok()
}

fn betas_approx_4(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>) -> Option<[f64; 4]> {
    let b = lstsq_cols(l, rho, &[0, 1, 3, 6])?;
    let (b0, sign) = if b[0] < 0.0 { ((-b[0]).sqrt(), -1.0) } else { (b[0].sqrt(), 1.0) };
    if b0 == 0.0 {
        return None;
    }
    Some([b0, sign * b[1] / b0, sign * b[2] / b0, sign * b[3] / b0])
}

fn betas_approx_2(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>) -> Option<[f64; 4]> {
    let b = lstsq_cols(l, rho, &[0, 1, 2])?;
    let (mut b0, b1) = if b[0] < 0.0 {
        ((-b[0]).sqrt(), if b[2] < 0.0 { (-b[2]).sqrt() } else { 0.0 })
    } else {
        (b[0].sqrt(), if b[2] > 0.0 { b[2].sqrt() } else { 0.0 })
    };
    if b[1] < 0.0 {
        b0 = -b0;
    }
    Some([b0, b1, 0.0, 0.0])
}

fn betas_approx_3(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>) -> Option<[f64; 4]> {
    let b = lstsq_cols(l, rho, &[0, 1, 2, 3, 4])?;
    let (mut b0, b1) = if b[0] < 0.0 {
        ((-b[0]).sqrt(), if b[2] < 0.0 { (-b[2]).sqrt() } else { 0.0 })
    } else {
        (b[0].sqrt(), if b[2] > 0.0 { b[2].sqrt() } else { 0.0 })
    };
    if b[1] < 0.0 {
        b0 = -b0;
    }
    if b0 == 0.0 {
        return None;
    }
    Some([b0, b1, b[3] / b0, 0.0])
}

fn beta_products(b: &[f64; 4]) -> SVector<f64, 10> {
    SVector::<f64, 10>::from([
        b[0] * b[0],
        b[0] * b[1],
        b[1] * b[1],
        b[0] * b[2],
        b[1] * b[2],
        b[2] * b[2],
        b[0] * b[3],
        b[1] * b[3],
        b[2] * b[3],
        b[3] * b[3],
    ])
}

/// Gauss-Newton on the control-point distance constraints.
fn refine_betas(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>, mut b: [f64; 4]) -> [f64; 4] {
    for _ in 0..BETA_GN_ITERS {
        let err = rho - l * beta_products(&b);
        let mut jac = SMatrix::<f64, 6, 4>::zeros();
        for i in 0..6 {
            let r = l.row(i);
            jac[(i, 0)] = 2.0 * r[0] * b[0] + r[1] * b[1] + r[3] * b[2] + r[6] * b[3];
            jac[(i, 1)] = r[1] * b[0] + 2.0 * r[2] * b[1] + r[4] * b[2] + r[7] * b[3];
            jac[(i, 2)] = r[3] * b[0] + r[4] * b[1] + 2.0 * r[5] * b[2] + r[8] * b[3];
            jac[(i, 3)] = r[6] * b[0] + r[7] * b[1] + r[8] * b[2] + 2.0 * r[9] * b[3];
        }
        let Ok(step) = jac.svd(true, true).solve(&err, 1e-14) else { break };
        for q in 0..4 {
            b[q] += step[q];
        }
        if step.norm() < 1e-15 {
            break;
        }
    }
    b
}

fn pose_from_betas(
    kernel: &[SVector<f64, 12>; 4],
    betas: &[f64; 4],
    alphas: &[[f64; 4]],
    world: &[Vector3<f64>],
) -> Option<Pose3> {
    let flat: SVector<f64, 12> = (0..4).map(|q| kernel[q] * betas[q]).sum();
    let ctrl: [Vector3<f64>; 4] = std::array::from_fn(|j| Vector3::new(flat[3 * j], flat[3 * j + 1], flat[3 * j + 2]));
    let mut cam: Vec<Vector3<f64>> = alphas
        .iter()
        .map(|a| ctrl[0] * a[0] + ctrl[1] * a[1] + ctrl[2] * a[2] + ctrl[3] * a[3])
        .collect();
    let mean_z = cam.iter().map(|p| p.z).sum::<f64>() / cam.len() as f64;
    if mean_z < 0.0 {
        cam.iter_mut().for_each(|p| *p = -*p);
    }
    if cam.iter().any(|p| p.z <= 0.0) {
        return None;
    }
    let pose = absolute_orientation(world, &cam);
    if world.iter().any(|x| pose.transform(x).z <= 0.0) {
        return None;
    }
    Some(pose)
}

/// Least-squares rigid alignment `dst ≈ R src + T` (Umeyama without scale).
pub fn absolute_orientation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose3 {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h = src
        .iter()
        .zip(dst)
        .fold(Matrix3::zeros(), |acc, (s, d)| acc + (d - cd) * (s - cs).transpose());
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    Pose3::from_approx_rotation(r, cd - r * cs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineOptions {
    pub max_iters: usize,
    /// Convergence threshold on the norm of the 6-DoF step.
    pub tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_iters: 20,
            tol: 1e-10,
        }
    }
}

const MAX_REJECTED_STEPS: usize = 8;

/// Damped Gauss-Newton on the pixel residuals, with a left-multiplied
/// rotation increment and an additive translation increment.
pub fn refine_reprojection(
    initial: &Pose3,
    kps: &KeypointSet,
    k: &CameraIntrinsics,
    opts: &RefineOptions,
) -> Result<Pose3, PnpError> {
    let (world, image) = kps.visible();
    if world.iter().any(|x| initial.transform(x).z <= 0.0) {
        return Err(PnpError::InvalidKeypoints(
            "initial pose puts a visible point behind the camera".into(),
        ));
    }
    let mut pose = *initial;
    let mut cost = reprojection_residual(&pose, kps, k);
    let mut damping = 1e-6;
    let mut rejected = 0;
    for _ in 0..opts.max_iters {
        if cost == 0.0 {
            break;
        }
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (x, px) in world.iter().zip(&image) {
            let rx = pose.rotation() * x;
            let xc = rx + pose.translation();
            let iz = 1.0 / xc.z;
            let res = [k.fx * xc.x * iz + k.cx - px.u, k.fy * xc.y * iz + k.cy - px.v];
            let dproj = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * xc.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * xc.y * iz * iz,
            );
            let mut dx = SMatrix::<f64, 3, 6>::zeros();
            dx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rx)));
            dx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dproj * dx;
            jtj += j.transpose() * j;
            jtr += j.transpose() * nalgebra::Vector2::new(res[0], res[1]);
        }
        let scale = jtj.diagonal().max().max(1e-12);
        let lhs = jtj + Matrix6::identity() * (damping * scale);
        let Some(step) = lhs.cholesky().map(|c| -c.solve(&jtr)) else {
            damping *= 10.0;
            continue;
        };
        if step.norm() < opts.tol {
            break;
        }
        let w = Vector3::new(step[0], step[1], step[2]);
        let t = Vector3::new(step[3], step[4], step[5]);
        let cand = Pose3::from_approx_rotation(rotation_exp(&w) * pose.rotation(), pose.translation() + t);
        let in_front = world.iter().all(|x| cand.transform(x).z > 0.0);
        let new_cost = if in_front { reprojection_residual(&cand, kps, k) } else { f64::INFINITY };
        if new_cost <= cost {
            pose = cand;
            cost = new_cost;
            damping = (damping * 0.1).max(1e-12);
            rejected = 0;
        } else {
            // Predicted decrease at round-off level: nothing left to gain.
            let predicted = -(jtr.dot(&step) + 0.5 * step.dot(&(jtj * step)));
            if predicted <= 1e-10 * cost {
                break;
            }
            damping *= 10.0;
            rejected += 1;
            if rejected >= MAX_REJECTED_STEPS {
                return Err(PnpError::DivergedRefinement(rejected));
            }
        }
    }
    Ok(pose)
}

/// Planar pose of the trolley in the sensor body frame.
///
/// Yaw comes from the trolley forward axis rotated into the body frame and
/// projected onto the ground plane; position is the projected origin.
pub fn planar_from_camera(pose: &Pose3) -> Pose2 {
    let to_body = body_to_optical().transpose();
    let forward = to_body * pose.rotation().column(0);
    let origin = to_body * pose.translation();
    Pose2::new(origin.x, origin.y, forward.y.atan2(forward.x))
}

/// EPnP followed by refinement; the EPnP pose is kept if refinement fails.
pub fn estimate_pose(kps: &KeypointSet, k: &CameraIntrinsics, opts: &RefineOptions) -> Result<Pose3, PnpError> {
    let init = solve_epnp(kps, k)?;
    Ok(refine_reprojection(&init, kps, k, opts).unwrap_or(init))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct GateParams {
    /// Blend weight of a new measurement.
    pub alpha: f64,
    pub max_jump_m: f64,
    pub max_jump_rad: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            max_jump_m: 0.5,
            max_jump_rad: 0.5,
        }
    }
}

/// Filtered world pose of the (mostly static) trolley.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilteredTarget {
    pose: Option<Pose2>,
    pub last_update_time: f64,
    pub in_fov: bool,
}

impl FilteredTarget {
    pub fn empty() -> Self {
        Self {
            pose: None,
            last_update_time: f64::NEG_INFINITY,
            in_fov: false,
        }
    }

    pub fn with_pose(pose: Pose2, time: f64) -> Self {
        Self {
            pose: Some(pose),
            last_update_time: time,
            in_fov: true,
        }
    }

    pub fn pose(&self) -> Option<Pose2> {
        self.pose
    }

    pub fn is_initialized(&self) -> bool {
        self.pose.is_some()
    }
}

/// Outcome of [`update_target`] alongside the new state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateOutcome {
    Initialized,
    Blended,
    Rejected,
    NoMeasurement,
}

pub fn update_target(
    state: &FilteredTarget,
    measurement: Option<Pose2>,
    now: f64,
    gate: &GateParams,
) -> (FilteredTarget, UpdateOutcome) {
    let Some(meas) = measurement else {
        return (
            FilteredTarget {
                in_fov: false,
                ..*state
            },
            UpdateOutcome::NoMeasurement,
        );
    };
    let Some(prev) = state.pose else {
        return (FilteredTarget::with_pose(meas, now), UpdateOutcome::Initialized);
    };
    let dtheta = angle_diff(meas.theta(), prev.theta());
    if meas.distance(&prev) > gate.max_jump_m || dtheta.abs() > gate.max_jump_rad {
        return (
            FilteredTarget {
                in_fov: true,
                ..*state
            },
            UpdateOutcome::Rejected,
        );
    }
    let a = gate.alpha;
    let blended = Pose2::new(
        a * meas.x + (1.0 - a) * prev.x,
        a * meas.y + (1.0 - a) * prev.y,
        prev.theta() + a * dtheta,
    );
    (FilteredTarget::with_pose(blended, now), UpdateOutcome::Blended)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_points;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0).unwrap()
    }

    fn keypoints_for(pose: &Pose3) -> KeypointSet {
        let model = default_keypoint_template();
        let px = project_points(&cam(), pose, &model).unwrap();
        KeypointSet::all_visible(px, model).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose3 {
        let w = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(3.0..8.0));
        Pose3::new(rotation_exp(&w), t).unwrap()
    }

    fn pose_error(a: &Pose3, b: &Pose3) -> (f64, f64) {
        ((a.rotation() - b.rotation()).norm(), (a.translation() - b.translation()).norm())
    }

    #[test]
    fn recovers_identity_rotation_noiseless() {
        let truth = Pose3::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 2.0)).unwrap();
        let est = solve_epnp(&keypoints_for(&truth), &cam()).unwrap();
        let (er, et) = pose_error(&est, &truth);
        assert!(er < 1e-6 && et < 1e-6, "rot {er} trans {et}");
    }

    #[test]
    fn three_points_are_degenerate() {
        let truth = Pose3::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 3.0)).unwrap();
        let mut kps = keypoints_for(&truth);
        kps.visibility = vec![true, true, true, false, false, false];
        assert!(matches!(solve_epnp(&kps, &cam()), Err(PnpError::DegenerateConfiguration(_))));
    }

    #[test]
    fn coplanar_template_is_degenerate() {
        let truth = Pose3::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 3.0)).unwrap();
        let mut kps = keypoints_for(&truth);
        kps.visibility = vec![true, true, true, true, false, false];
        assert!(matches!(solve_epnp(&kps, &cam()), Err(PnpError::DegenerateConfiguration(_))));
    }

    #[test]
    fn duplicate_model_points_rejected() {
        let model = vec![Vector3::zeros(); 6];
        let px = vec![PixelPoint::new(0.0, 0.0); 6];
        assert!(KeypointSet::all_visible(px, model).is_err());
    }

    #[test]
    fn refinement_fixed_point_at_truth() {
        let truth = Pose3::new(Matrix3::identity(), Vector3::new(0.1, -0.2, 4.0)).unwrap();
        let kps = keypoints_for(&truth);
        let out = refine_reprojection(&truth, &kps, &cam(), &RefineOptions::default()).unwrap();
        assert_eq!(out, truth);
    }

    #[test]
    fn refinement_removes_five_degree_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let truth = random_pose(&mut rng);
            let kps = keypoints_for(&truth);
            assert!(reprojection_residual(&truth, &kps, &cam()) < 1e-16);
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let start = Pose3::new(rotation_exp(&(axis * 5f64.to_radians())) * truth.rotation(), *truth.translation()).unwrap();
            let out = refine_reprojection(&start, &kps, &cam(), &RefineOptions::default()).unwrap();
            assert!(reprojection_residual(&out, &kps, &cam()) < 1e-8);
        }
    }

    #[test]
    fn refinement_does_not_increase_noisy_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = rand_distr::Normal::new(0.0, 2.0).unwrap();
        for _ in 0..100 {
            let truth = random_pose(&mut rng);
            let mut kps = keypoints_for(&truth);
            for p in &mut kps.image_points {
                p.u += rng.sample(noise);
                p.v += rng.sample(noise);
            }
            let Ok(init) = solve_epnp(&kps, &cam()) else { continue };
            let before = reprojection_residual(&init, &kps, &cam());
            let out = refine_reprojection(&init, &kps, &cam(), &RefineOptions::default()).unwrap();
            assert!(reprojection_residual(&out, &kps, &cam()) <= before);
        }
    }

    #[test]
    fn planar_extraction_identity_camera_mount() {
        // Trolley 3 m straight ahead, facing away from the camera.
        let r = body_to_optical();
        let t = body_to_optical() * Vector3::new(3.0, 0.0, 0.0);
        let p = planar_from_camera(&Pose3::new(r, t).unwrap());
        assert!((p.x - 3.0).abs() < 1e-12 && p.y.abs() < 1e-12 && p.theta().abs() < 1e-12);
    }

    #[test]
    fn filter_holds_when_absent() {
        let s = FilteredTarget::with_pose(Pose2::new(1.0, 2.0, 0.3), 0.0);
        let (out, o) = update_target(&s, None, 1.0, &GateParams::default());
        assert_eq!(out.pose(), s.pose());
        assert!(!out.in_fov);
        assert_eq!(o, UpdateOutcome::NoMeasurement);
    }

    #[test]
    fn filter_rejects_jump_and_blends() {
        let s = FilteredTarget::with_pose(Pose2::identity(), 0.0);
        let gate = GateParams { alpha: 0.5, max_jump_m: 0.5, max_jump_rad: 0.5 };
        let (out, o) = update_target(&s, Some(Pose2::new(5.0, 5.0, 0.0)), 1.0, &gate);
        assert_eq!(out.pose(), Some(Pose2::identity()));
        assert_eq!(o, UpdateOutcome::Rejected);
        let (out, _) = update_target(&s, Some(Pose2::new(0.1, 0.0, 0.0)), 1.0, &gate);
        let p = out.pose().unwrap();
        assert!((p.x - 0.05).abs() < 1e-15 && p.y == 0.0 && p.theta() == 0.0);
    }

    #[test]
    fn filter_blends_angles_across_pi() {
        let s = FilteredTarget::with_pose(Pose2::new(0.0, 0.0, 3.1), 0.0);
        let gate = GateParams { alpha: 0.5, ..Default::default() };
        let (out, _) = update_target(&s, Some(Pose2::new(0.0, 0.0, -3.1)), 1.0, &gate);
        let th = out.pose().unwrap().theta();
        assert!(th.abs() > 3.1, "blend went the long way round: {th}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn epnp_round_trip(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = random_pose(&mut rng);
            let est = solve_epnp(&keypoints_for(&truth), &cam()).unwrap();
            let (er, et) = pose_error(&est, &truth);
            prop_assert!(er < 1e-6 && et < 1e-6);
        }

        #[test]
        fn yaw_ignores_trolley_translation(yaw in -3.0..3.0f64, dx in -2.0..2.0f64, dy in -2.0..2.0f64) {
            let r = body_to_optical() * crate::geometry::rot_z(yaw);
            let a = Pose3::new(r, Vector3::new(0.0, 0.0, 4.0)).unwrap();
            let b = Pose3::new(r, Vector3::new(dx, 0.1, 4.0 + dy)).unwrap();
            prop_assert!(angle_diff(planar_from_camera(&a).theta(), planar_from_camera(&b).theta()).abs() < 1e-12);
            prop_assert!(angle_diff(planar_from_camera(&a).theta(), yaw).abs() < 1e-12);
        }

        #[test]
        fn filter_only_moves_on_accepted_measurement(
            x in -1.0..1.0f64, y in -1.0..1.0f64, t in -0.6..0.6f64, present in any::<bool>()
        ) {
            let s = FilteredTarget::with_pose(Pose2::identity(), 0.0);
            let gate = GateParams::default();
            let m = present.then(|| Pose2::new(x, y, t));
            let (out, outcome) = update_target(&s, m, 1.0, &gate);
            let changed = out.pose() != s.pose();
            prop_assert_eq!(changed, outcome == UpdateOutcome::Blended && (x != 0.0 || y != 0.0 || t != 0.0));
        }
    }
}
