//! Single-algorithm wrappers behind the offline subcommands.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use trolley_core::geometry::{CameraIntrinsics, PixelPoint, Pose2};
use trolley_core::plane::{plane_to_pose, ransac_plane, PointCloud, RansacParams};
use trolley_core::planner::{plan_approach, plan_docking, NmpcProblem, NmpcSolution, PlanError, RobotModel};
use trolley_core::pnp::{estimate_pose, planar_from_camera, reprojection_residual, KeypointSet, PnpError, RefineOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRequest {
    pub problem: NmpcProblem,
    #[serde(default)]
    pub model: RobotModel,
}

/// Docking problem when a view barrier is present, approach otherwise.
pub fn solve_once(req: &SolveRequest) -> Result<NmpcSolution, PlanError> {
    if req.problem.has_view() {
        plan_docking(&req.problem, &req.model)
    } else {
        plan_approach(&req.problem, &req.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub inliers: usize,
    pub points: usize,
    /// Trolley pose in the sensor frame; absent for near-horizontal planes.
    pub pose: Option<Pose2>,
}

pub fn fit_plane(cloud: &PointCloud, params: &RansacParams) -> Result<PlaneReport, trolley_core::plane::PlaneError> {
    let m = ransac_plane(cloud, params)?;
    Ok(PlaneReport {
        a: m.a,
        b: m.b,
        c: m.c,
        d: m.d,
        inliers: m.inlier_indices.len(),
        points: cloud.len(),
        pose: plane_to_pose(&m, cloud).ok(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpRequest {
    pub intrinsics: CameraIntrinsics,
    pub image_points: Vec<[f64; 2]>,
    pub model_points: Vec<[f64; 3]>,
    #[serde(default)]
    pub visibility: Option<Vec<bool>>,
    #[serde(default)]
    pub refine: RefineOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpReport {
    /// Row-major camera-from-trolley rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    /// Trolley pose in the camera's ground-plane frame.
    pub planar: Pose2,
    pub residual_px2: f64,
}

pub fn pnp(req: &PnpRequest) -> Result<PnpReport, PnpError> {
    let px = req.image_points.iter().map(|p| PixelPoint::new(p[0], p[1])).collect();
    let model: Vec<Vector3<f64>> = req.model_points.iter().map(|p| Vector3::from(*p)).collect();
    let vis = req.visibility.clone().unwrap_or_else(|| vec![true; model.len()]);
    let kps = KeypointSet::new(px, model, vis)?;
    let pose = estimate_pose(&kps, &req.intrinsics, &req.refine)?;
    let r = pose.rotation();
    let t = pose.translation();
    Ok(PnpReport {
        rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
        translation: [t.x, t.y, t.z],
        planar: planar_from_camera(&pose),
        residual_px2: reprojection_residual(&pose, &kps, &req.intrinsics),
    })
}
