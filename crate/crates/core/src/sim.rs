//! Deterministic kinematic world with synthetic camera and LiDAR sensors.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{body_to_optical, project_points, rot_z, CameraIntrinsics, PixelPoint, Pose2, Pose3};
use crate::mission::{Command, ForkCommand};
use crate::plane::{docking_pose_from_trolley, PointCloud};
use crate::planner::{dd_step, Obstacle};
use crate::pnp::{default_keypoint_template, KeypointSet};

/// Constant-speed walker along a polyline. Waits at the first waypoint until
/// `start_time`, stops at the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mover {
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
    #[serde(default)]
    pub start_time: f64,
    #[serde(skip)]
    state: MoverState,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct MoverState {
    position: Option<[f64; 2]>,
    next: usize,
}

impl Mover {
    pub fn new(waypoints: Vec<[f64; 2]>, speed: f64, start_time: f64) -> Self {
        Self { waypoints, speed, start_time, state: MoverState::default() }
    }

    pub fn position(&self) -> [f64; 2] {
        self.state.position.unwrap_or(self.waypoints[0])
    }

    fn next_index(&self) -> usize {
        self.state.next.max(1)
    }

    /// Velocity the mover will hold over the next tick at time `t`.
    pub fn velocity(&self, t: f64) -> [f64; 2] {
        let i = self.next_index();
        if t < self.start_time || i >= self.waypoints.len() {
            return [0.0, 0.0];
        }
        let p = Vector2::from(self.position());
        let d = Vector2::from(self.waypoints[i]) - p;
        let n = d.norm();
        if n < 1e-12 {
            return [0.0, 0.0];
        }
        let v = d * (self.speed / n);
        [v.x, v.y]
    }

    /// Advances along the polyline by `speed * dt` starting at time `t`.
    pub fn advance(&mut self, t: f64, dt: f64) {
        if t < self.start_time {
            return;
        }
        let mut p = Vector2::from(self.position());
        let mut i = self.next_index();
        let mut budget = self.speed * dt;
        while budget > 0.0 && i < self.waypoints.len() {
            let w = Vector2::from(self.waypoints[i]);
            let d = (w - p).norm();
            if d <= budget {
                p = w;
                budget -= d;
                i += 1;
            } else {
                p += (w - p) * (budget / d);
                budget = 0.0;
            }
        }
        self.state = MoverState { position: Some([p.x, p.y]), next: i };
    }

    pub fn as_obstacle(&self, t: f64) -> Obstacle {
        Obstacle { center: self.position(), velocity: self.velocity(t) }
    }
}

/// Draw-wire fork: rises until it meets the trolley or its end stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct ForkSim {
    pub l: f64,
    /// Travel per tick.
    pub rate: f64,
    pub l_max: f64,
    /// Stop height when the fork engages the trolley frame.
    pub l_grasp: f64,
    /// Stop height when a misaligned fork hits the trolley.
    pub l_block: f64,
    /// Pose tolerance to the true docking pose for a clean grasp.
    pub align_pos_m: f64,
    pub align_ang_rad: f64,
    /// Beyond this distance from the docking pose the fork meets nothing.
    pub reach_m: f64,
}

impl Default for ForkSim {
    fn default() -> Self {
        Self {
            l: 0.0,
            rate: 0.01,
            l_max: 0.4,
            l_grasp: 0.22,
            l_block: 0.08,
            align_pos_m: 0.05,
            align_ang_rad: 0.1,
            reach_m: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contact {
    Aligned,
    Misaligned,
    Clear,
}

impl ForkSim {
    pub fn step(&self, cmd: ForkCommand, contact: Contact) -> ForkSim {
        let mut f = *self;
        match cmd {
            ForkCommand::Lift => {
                let stop = match contact {
                    Contact::Aligned => self.l_grasp,
                    Contact::Misaligned => self.l_block,
                    Contact::Clear => self.l_max,
                };
                // Already above a new stop (robot moved under a raised fork): hold.
                if f.l < stop {
                    f.l = (f.l + self.rate).min(stop);
                }
            }
            ForkCommand::Lower => f.l = (f.l - self.rate).max(0.0),
            ForkCommand::Hold => {}
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub robot: Pose2,
    pub trolley: Pose2,
    pub obstacles: Vec<Obstacle>,
    pub humans: Vec<Mover>,
    pub time: f64,
    /// Ticks since the start; `time` is derived from it to avoid drift.
    pub step: u64,
    pub dt: f64,
    pub rng_seed: u64,
    pub fork: ForkSim,
    /// Docking standoff used by the fork contact model.
    pub docking_standoff: f64,
    /// Trolley pose in the robot frame once grasped.
    pub attached: Option<Pose2>,
}

impl World {
    pub fn new(robot: Pose2, trolley: Pose2, dt: f64, rng_seed: u64) -> Self {
        Self {
            robot,
            trolley,
            obstacles: Vec::new(),
            humans: Vec::new(),
            time: 0.0,
            step: 0,
            dt,
            rng_seed,
            fork: ForkSim::default(),
            docking_standoff: 0.4,
            attached: None,
        }
    }

    /// Static obstacles followed by humans, with current velocities.
    pub fn all_obstacles(&self) -> Vec<Obstacle> {
        let mut v = self.obstacles.clone();
        v.extend(self.humans.iter().map(|h| h.as_obstacle(self.time)));
        v
    }

    pub fn true_docking_pose(&self) -> Pose2 {
        docking_pose_from_trolley(&self.trolley, self.docking_standoff)
    }

    pub fn fork_contact(&self) -> Contact {
        if self.attached.is_some() {
            return Contact::Aligned;
        }
        let goal = self.true_docking_pose();
        let dpos = self.robot.distance(&goal);
        let dang = crate::geometry::angle_diff(self.robot.theta(), goal.theta()).abs();
        if dpos > self.fork.reach_m {
            Contact::Clear
        } else if dpos <= self.fork.align_pos_m && dang <= self.fork.align_ang_rad {
            Contact::Aligned
        } else {
            Contact::Misaligned
        }
    }
}

/// Advances the world by one `dt`.
pub fn tick(world: &World, cmd: &Command) -> World {
    let mut w = world.clone();
    w.robot = dd_step(&world.robot, (cmd.v, cmd.w), world.dt);
    for h in &mut w.humans {
        h.advance(world.time, world.dt);
    }
    let contact = world.fork_contact();
    w.fork = world.fork.step(cmd.fork, contact);
    if w.attached.is_none() && contact == Contact::Aligned && w.fork.l >= w.fork.l_grasp {
        w.attached = Some(world.robot.inverse().compose(&world.trolley));
    }
    if let Some(rel) = w.attached {
        w.trolley = w.robot.compose(&rel);
    }
    w.step = world.step + 1;
    w.time = w.step as f64 * world.dt;
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    pub width: f64,
    pub height: f64,
    pub noise_px: f64,
    /// Camera mount in the robot frame.
    pub offset: Pose2,
    /// Trolley keypoints in the trolley frame.
    pub template: Vec<[f64; 3]>,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let half_fov = 60f64.to_radians();
        let f = 640.0 / half_fov.tan();
        Self {
            intrinsics: CameraIntrinsics::new(f, f, 640.0, 360.0).expect("positive focal length"),
            width: 1280.0,
            height: 720.0,
            // Calibrated to a 0.17 m mean long-range position error.
            noise_px: 9.65,
            offset: Pose2::identity(),
            template: default_keypoint_template().iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct LidarConfig {
    pub fov_deg: f64,
    pub noise_m: f64,
    /// Backplane samples per scan.
    pub density: usize,
    /// Uniform clutter points per scan.
    pub clutter: usize,
    pub max_range_m: f64,
    pub offset: Pose2,
    /// Backplane width and height.
    pub backplane: [f64; 2],
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            fov_deg: 70.0,
            // Calibrated to 0.03 m / 0.02 rad mean short-range errors.
            noise_m: 0.0094,
            density: 36,
            clutter: 0,
            max_range_m: 2.5,
            offset: Pose2::identity(),
            backplane: [0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub camera: CameraConfig,
    pub lidar: LidarConfig,
    /// Standard deviations of the reported robot pose (position, heading).
    pub pose_noise: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorBundle {
    pub time: f64,
    pub robot_pose: Pose2,
    pub keypoints: Option<KeypointSet>,
    pub cloud: Option<PointCloud>,
    pub obstacles: Vec<Obstacle>,
    pub wire_length: f64,
}

/// Trolley pose in the camera frame (`X_c = R X_t + T`).
pub fn camera_from_trolley(world: &World, cam: &CameraConfig) -> Pose3 {
    let rel = world.robot.compose(&cam.offset).inverse().compose(&world.trolley);
    let b = body_to_optical();
    Pose3::from_approx_rotation(b * rot_z(rel.theta()), b * Vector3::new(rel.x, rel.y, 0.0))
}

/// Noiseless keypoints if the whole template is in view, else `None`.
pub fn camera_view(world: &World, cam: &CameraConfig) -> Option<(Vec<PixelPoint>, Vec<Vector3<f64>>)> {
    let pose = camera_from_trolley(world, cam);
    let model: Vec<Vector3<f64>> = cam.template.iter().map(|p| Vector3::from(*p)).collect();
    let px = project_points(&cam.intrinsics, &pose, &model).ok()?;
    let inside = px.iter().all(|p| p.u >= 0.0 && p.u < cam.width && p.v >= 0.0 && p.v < cam.height);
    inside.then_some((px, model))
}

pub fn sense_camera(world: &World, cam: &CameraConfig, rng: &mut impl Rng) -> Option<KeypointSet> {
    let (px, model) = camera_view(world, cam)?;
    let noisy = if cam.noise_px > 0.0 {
        let n = Normal::new(0.0, cam.noise_px).expect("finite noise");
        px.iter().map(|p| PixelPoint::new(p.u + n.sample(rng), p.v + n.sample(rng))).collect()
    } else {
        px
    };
    KeypointSet::all_visible(noisy, model).ok()
}

/// Trolley pose in the LiDAR frame, if its backplane is in range, in the
/// FoV and facing the sensor.
pub fn lidar_view(world: &World, lidar: &LidarConfig) -> Option<Pose2> {
    let rel = world.robot.compose(&lidar.offset).inverse().compose(&world.trolley);
    let r = rel.position().norm();
    let half = (lidar.fov_deg / 2.0).to_radians();
    if r > lidar.max_range_m || rel.y.atan2(rel.x).abs() > half {
        return None;
    }
    // The rear face is seen only from behind the trolley.
    (rel.heading().dot(&rel.position()) > 0.0).then_some(rel)
}

pub fn sense_lidar(world: &World, lidar: &LidarConfig, rng: &mut impl Rng) -> Option<PointCloud> {
    let rel = lidar_view(world, lidar)?;
    let half = (lidar.fov_deg / 2.0).to_radians();
    let rot = rot_z(rel.theta());
    let origin = Vector3::new(rel.x, rel.y, 0.0);
    let [w, h] = lidar.backplane;
    let noise = Normal::new(0.0, lidar.noise_m.max(0.0)).expect("finite noise");
    let mut pts = Vec::with_capacity(lidar.density + lidar.clutter);
    let mut attempts = 0;
    while pts.len() < lidar.density && attempts < 100 * lidar.density.max(1) {
        attempts += 1;
        let local = Vector3::new(0.0, rng.random_range(-w / 2.0..w / 2.0), rng.random_range(-h / 2.0..h / 2.0));
        let p = rot * local + origin;
        if p.y.atan2(p.x).abs() > half {
            continue;
        }
        let dist = p.norm();
        let e = if lidar.noise_m > 0.0 { noise.sample(rng) } else { 0.0 };
        pts.push(p * ((dist + e) / dist));
    }
    for _ in 0..lidar.clutter {
        pts.push(Vector3::new(
            rng.random_range(0.3..lidar.max_range_m),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.35..0.35),
        ));
    }
    Some(PointCloud::new(pts))
}

/// All sensor readings for the current state.
pub fn sense(world: &World, cfg: &SensorConfig, rng: &mut impl Rng) -> SensorBundle {
    let keypoints = sense_camera(world, &cfg.camera, rng);
    let cloud = sense_lidar(world, &cfg.lidar, rng);
    let mut robot_pose = world.robot;
    if cfg.pose_noise[0] > 0.0 || cfg.pose_noise[1] > 0.0 {
        let np = Normal::new(0.0, cfg.pose_noise[0]).expect("finite noise");
        let na = Normal::new(0.0, cfg.pose_noise[1]).expect("finite noise");
        robot_pose = Pose2::new(robot_pose.x + np.sample(rng), robot_pose.y + np.sample(rng), robot_pose.theta() + na.sample(rng));
    }
    SensorBundle {
        time: world.time,
        robot_pose,
        keypoints,
        cloud,
        obstacles: world.all_obstacles(),
        wire_length: world.fork.l,
    }
}
