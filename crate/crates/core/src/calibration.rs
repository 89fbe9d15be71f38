//! Monte-Carlo error statistics of the perception pipelines, and the sweeps
//! that pick sensor noise levels matching a target error.
//!
//! Each trial draws an independent robot/trolley configuration, senses it
//! once and runs the pipeline. The gate-then-blend filter passes a first
//! measurement through unchanged, so per-frame error is the pipeline error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, Pose2};
use crate::mission::{camera_measurement, lidar_measurement, PerceptionParams};
use crate::pnp::{update_target, FilteredTarget};
use crate::sim::{sense_camera, sense_lidar, CameraConfig, LidarConfig, World};

/// Sampling ranges of the trolley relative to the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRanges {
    pub distance: [f64; 2],
    /// Bearing of the trolley from the sensor heading.
    pub bearing: f64,
    /// Trolley yaw relative to the line of sight.
    pub yaw: f64,
}

impl TrialRanges {
    pub fn long_range() -> Self {
        Self { distance: [1.5, 3.5], bearing: 0.5, yaw: 0.5 }
    }

    pub fn short_range() -> Self {
        Self { distance: [0.3, 2.0], bearing: 0.35, yaw: 0.3 }
    }

    fn sample(&self, rng: &mut impl Rng) -> World {
        let robot = Pose2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let d = rng.random_range(self.distance[0]..=self.distance[1]);
        let b = rng.random_range(-self.bearing..=self.bearing);
        let yaw = b + rng.random_range(-self.yaw..=self.yaw);
        let trolley = robot.compose(&Pose2::new(d * b.cos(), d * b.sin(), yaw));
        World::new(robot, trolley, 0.1, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub frames: usize,
    /// Frames where the sensor saw the trolley but the pipeline failed.
    pub failures: usize,
    pub mean_pos: f64,
    pub var_pos: f64,
    pub mean_ang: f64,
    pub median_pos: f64,
}

impl ErrorStats {
    fn from_errors(mut pos: Vec<f64>, ang: Vec<f64>, failures: usize) -> Self {
        let n = pos.len().max(1) as f64;
        let mean_pos = pos.iter().sum::<f64>() / n;
        let var_pos = pos.iter().map(|e| (e - mean_pos).powi(2)).sum::<f64>() / n;
        let mean_ang = ang.iter().sum::<f64>() / n;
        pos.sort_by(|a, b| a.total_cmp(b));
        let median_pos = if pos.is_empty() { 0.0 } else { pos[pos.len() / 2] };
        Self { frames: pos.len(), failures, mean_pos, var_pos, mean_ang, median_pos }
    }
}

fn filtered_error(meas: Pose2, truth: &Pose2, params: &PerceptionParams) -> (f64, f64) {
    let (f, _) = update_target(&FilteredTarget::empty(), Some(meas), 0.0, &params.gate);
    let est = f.pose().expect("first measurement initializes the filter");
    (est.distance(truth), angle_diff(est.theta(), truth.theta()).abs())
}

/// Keypoints, EPnP, refinement and filter over `frames` visible frames.
pub fn camera_error_stats(cam: &CameraConfig, params: &PerceptionParams, ranges: &TrialRanges, frames: usize, seed: u64) -> ErrorStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = PerceptionParams { intrinsics: cam.intrinsics, camera_offset: cam.offset, ..*params };
    let (mut pos, mut ang, mut failures) = (Vec::with_capacity(frames), Vec::with_capacity(frames), 0);
    while pos.len() < frames {
        let w = ranges.sample(&mut rng);
        let Some(kps) = sense_camera(&w, cam, &mut rng) else { continue };
        match camera_measurement(&kps, &w.robot, &p) {
            Some(m) => {
                let (e, a) = filtered_error(m, &w.trolley, &p);
                pos.push(e);
                ang.push(a);
            }
            None => failures += 1,
        }
    }
    ErrorStats::from_errors(pos, ang, failures)
}

/// Backplane cloud, crop, RANSAC, plane pose and filter over `frames` scans.
pub fn lidar_error_stats(lidar: &LidarConfig, params: &PerceptionParams, ranges: &TrialRanges, frames: usize, seed: u64) -> ErrorStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = PerceptionParams { lidar_offset: lidar.offset, ..*params };
    let (mut pos, mut ang, mut failures) = (Vec::with_capacity(frames), Vec::with_capacity(frames), 0);
    let mut k = 0u64;
    while pos.len() < frames {
        let w = ranges.sample(&mut rng);
        let Some(cloud) = sense_lidar(&w, lidar, &mut rng) else { continue };
        k += 1;
        match lidar_measurement(&cloud, &w.robot, &p, seed.wrapping_add(k)) {
            Some(m) => {
                let (e, a) = filtered_error(m, &w.trolley, &p);
                pos.push(e);
                ang.push(a);
            }
            None => failures += 1,
        }
    }
    ErrorStats::from_errors(pos, ang, failures)
}

/// Bisection on a monotone error curve `f(x)`, on a log scale in `[lo, hi]`.
pub fn solve_monotone(mut f: impl FnMut(f64) -> f64, target: f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let increasing = f(hi) > f(lo);
    for _ in 0..iters {
        let mid = (lo * hi).sqrt();
        if (f(mid) < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// Pixel noise giving `target_pos` mean position error.
pub fn calibrate_camera(base: &CameraConfig, params: &PerceptionParams, target_pos: f64, frames: usize, seed: u64) -> f64 {
    let ranges = TrialRanges::long_range();
    solve_monotone(
        |s| {
            let cam = CameraConfig { noise_px: s, ..base.clone() };
            camera_error_stats(&cam, params, &ranges, frames, seed).mean_pos
        },
        target_pos,
        0.1,
        20.0,
        24,
    )
}

/// Range noise and scan density matching both target errors. Density mostly
/// sets the lateral centroid error, range noise the normal error; the two
/// are solved alternately.
pub fn calibrate_lidar(base: &LidarConfig, params: &PerceptionParams, target_pos: f64, target_ang: f64, frames: usize, seed: u64) -> (f64, usize) {
    let ranges = TrialRanges::short_range();
    let stats = |sigma: f64, density: usize| {
        let l = LidarConfig { noise_m: sigma, density, ..base.clone() };
        lidar_error_stats(&l, params, &ranges, frames, seed)
    };
    let (mut sigma, mut density) = (base.noise_m, base.density);
    for _ in 0..4 {
        sigma = solve_monotone(|s| stats(s, density).mean_ang, target_ang, 1e-4, 0.1, 16);
        let d = solve_monotone(|d| stats(sigma, d.round().max(3.0) as usize).mean_pos, target_pos, 3.0, 2000.0, 14);
        density = d.round().max(3.0) as usize;
    }
    (sigma, density)
}
