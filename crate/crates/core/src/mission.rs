//! Stage machine coordinating perception, planning and the fork manipulator.

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, compose_to_world, CameraIntrinsics, Pose2};
use crate::plane::{crop_cloud, docking_pose_from_trolley, plane_to_pose, ransac_plane, PointCloud, RangeBox, RansacParams};
use crate::planner::{
    h_obstacle, h_view, plan_approach, plan_docking, BarrierSpec, NmpcProblem, NmpcSolution, PlanError, RobotModel,
    SolveStatus, SolverOptions,
};
use crate::pnp::{estimate_pose, planar_from_camera, update_target, FilteredTarget, GateParams, KeypointSet, RefineOptions, UpdateOutcome};
use crate::sim::SensorBundle;

/// Added to `d_safe` inside the planner so solver round-off never shows up
/// as a negative barrier value on the executed trajectory.
pub const SAFETY_MARGIN_M: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForkCommand {
    Lift,
    Lower,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub v: f64,
    pub w: f64,
    pub fork: ForkCommand,
}

impl Command {
    pub fn stop(fork: ForkCommand) -> Self {
        Self { v: 0.0, w: 0.0, fork }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulatorMode {
    Idle,
    Lifting,
    Lowering,
    AtPosition,
    Blocked,
    Grasped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorParams {
    pub eps_pos: f64,
    /// Per-tick wire change below which the fork counts as stalled.
    pub eps_stall: f64,
    pub stall_ticks: u32,
    /// Wire lengths at which a stall means the trolley is held.
    pub grasp_band: [f64; 2],
    /// Lift target when nothing stops the fork.
    pub lift_target: f64,
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self {
            eps_pos: 0.002,
            eps_stall: 0.0005,
            stall_ticks: 5,
            grasp_band: [0.18, 0.26],
            lift_target: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorState {
    pub l: f64,
    pub delta_l: f64,
    pub mode: ManipulatorMode,
    pub l_target: f64,
    pub stall_count: u32,
}

impl ManipulatorState {
    pub fn new(l: f64) -> Self {
        Self { l, delta_l: 0.0, mode: ManipulatorMode::Idle, l_target: 0.0, stall_count: 0 }
    }
}

/// Draw-wire feedback: arrival, stall and grasp detection from `Δl`.
pub fn manipulator_update(
    m: &ManipulatorState,
    commanded: ForkCommand,
    measured_l: f64,
    params: &ManipulatorParams,
) -> ManipulatorState {
    let delta_l = measured_l - m.l;
    let mut next = ManipulatorState { l: measured_l, delta_l, ..*m };
    match commanded {
        ForkCommand::Hold => {
            next.stall_count = 0;
            return next;
        }
        ForkCommand::Lift => next.l_target = params.lift_target,
        ForkCommand::Lower => next.l_target = 0.0,
    }
    next.stall_count = if delta_l.abs() < params.eps_stall { m.stall_count + 1 } else { 0 };
    next.mode = if (measured_l - next.l_target).abs() < params.eps_pos {
        ManipulatorMode::AtPosition
    } else if next.stall_count >= params.stall_ticks {
        let [lo, hi] = params.grasp_band;
        if commanded == ForkCommand::Lift && (lo..=hi).contains(&measured_l) {
            ManipulatorMode::Grasped
        } else {
            ManipulatorMode::Blocked
        }
    } else if commanded == ForkCommand::Lift {
        ManipulatorMode::Lifting
    } else {
        ManipulatorMode::Lowering
    };
    next
}

/// Pose `standoff_m` behind the trolley with its heading.
pub fn approach_goal(q_tar: &Pose2, standoff_m: f64) -> Pose2 {
    docking_pose_from_trolley(q_tar, standoff_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Approach,
    Dock,
    Capture,
    Return,
    Done,
    Aborted,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Approach => "approach",
            Stage::Dock => "dock",
            Stage::Capture => "capture",
            Stage::Return => "return",
            Stage::Done => "done",
            Stage::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    InfeasibleStart { obstacle: usize, h: f64 },
    TickBudget { stage: Stage },
    /// Two failed lifts.
    ManipulatorBlocked,
    Planner { message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapturePhase {
    Lift,
    Lower,
    Realign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct PlannerParams {
    pub model: RobotModel,
    pub horizon: usize,
    pub terminal_weight: [[f64; 3]; 3],
    pub control_weight: [[f64; 2]; 2],
    /// Terminal weight for the docking stage; the approach weight if absent.
    pub dock_terminal_weight: Option<[[f64; 3]; 3]>,
    /// Terminal weight for the return stage. Arrival is judged on position
    /// only, and a heading term parks the robot beside the spot.
    pub return_terminal_weight: Option<[[f64; 3]; 3]>,
    pub slack_weight: f64,
    pub obstacle_decay: f64,
    pub view_decay: f64,
    pub d_safe: f64,
    pub theta_max: f64,
    pub solver: SolverOptions,
}

impl Default for PlannerParams {
    fn default() -> Self {
        let p = NmpcProblem::new(Pose2::identity(), Pose2::identity());
        Self {
            model: RobotModel::default(),
            horizon: p.horizon,
            terminal_weight: p.terminal_weight,
            control_weight: p.control_weight,
            dock_terminal_weight: None,
            return_terminal_weight: Some([[10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 0.0]]),
            slack_weight: p.slack_weight,
            obstacle_decay: 0.3,
            view_decay: 0.3,
            d_safe: 0.6,
            theta_max: 0.5,
            solver: p.solver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct PerceptionParams {
    pub intrinsics: CameraIntrinsics,
    pub camera_offset: Pose2,
    pub lidar_offset: Pose2,
    pub range_box: RangeBox,
    pub ransac: RansacParams,
    pub refine: RefineOptions,
    pub gate: GateParams,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            intrinsics: crate::sim::CameraConfig::default().intrinsics,
            camera_offset: Pose2::identity(),
            lidar_offset: Pose2::identity(),
            range_box: RangeBox::default(),
            ransac: RansacParams::default(),
            refine: RefineOptions::default(),
            gate: GateParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct StageBudgets {
    pub approach: u64,
    pub dock: u64,
    pub capture: u64,
    #[serde(rename = "return")]
    pub ret: u64,
}

impl Default for StageBudgets {
    fn default() -> Self {
        Self { approach: 1500, dock: 600, capture: 400, ret: 1500 }
    }
}

impl StageBudgets {
    fn for_stage(&self, s: Stage) -> u64 {
        match s {
            Stage::Approach => self.approach,
            Stage::Dock => self.dock,
            Stage::Capture => self.capture,
            Stage::Return => self.ret,
            Stage::Done | Stage::Aborted => u64::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct MissionParams {
    pub approach_standoff: f64,
    pub docking_standoff: f64,
    pub dock_switch_radius: f64,
    /// Trolley distance band in which docking may start.
    pub dock_band: [f64; 2],
    /// Docking falls back to approach beyond this trolley distance.
    pub dock_max_range: f64,
    pub capture_pos_tol: f64,
    pub capture_ang_tol: f64,
    /// Capture also waits until the docking planner asks for less than this.
    pub settle_speed: f64,
    pub settle_rate: f64,
    pub return_spot: Pose2,
    pub return_tol: f64,
    pub budgets: StageBudgets,
    /// Ticks without a LiDAR measurement before docking gives up the target.
    pub lost_ticks: u32,
    /// Consecutive gate rejections after which approach re-initializes the
    /// filter from the latest camera measurement.
    pub reacquire_after: u32,
    /// Yaw rate while no trolley has been seen.
    pub search_rate: f64,
    pub manipulator: ManipulatorParams,
    /// Configured in their own scenario sections.
    #[serde(skip)]
    pub planner: PlannerParams,
    #[serde(skip)]
    pub perception: PerceptionParams,
}

impl Default for MissionParams {
    fn default() -> Self {
        Self {
            approach_standoff: 1.5,
            docking_standoff: 0.4,
            dock_switch_radius: 0.15,
            dock_band: [0.3, 2.0],
            dock_max_range: 2.5,
            capture_pos_tol: 0.03,
            capture_ang_tol: 0.05,
            settle_speed: 0.005,
            settle_rate: 0.01,
            return_spot: Pose2::identity(),
            return_tol: 0.1,
            budgets: StageBudgets::default(),
            lost_ticks: 20,
            reacquire_after: 5,
            search_rate: 0.4,
            manipulator: ManipulatorParams::default(),
            planner: PlannerParams::default(),
            perception: PerceptionParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub stage: Stage,
    pub target: FilteredTarget,
    pub goal: Option<Pose2>,
    pub tick_count: u64,
    pub stage_ticks: u64,
    pub lost_ticks: u32,
    pub rejections: u32,
    pub failed_lifts: u32,
    pub capture_phase: CapturePhase,
    pub manipulator: ManipulatorState,
    pub warm_start: Option<Vec<[f64; 2]>>,
    pub abort_reason: Option<AbortReason>,
}

impl MissionState {
    pub fn new(wire_length: f64) -> Self {
        Self {
            stage: Stage::Approach,
            target: FilteredTarget::empty(),
            goal: None,
            tick_count: 0,
            stage_ticks: 0,
            lost_ticks: 0,
            rejections: 0,
            failed_lifts: 0,
            capture_phase: CapturePhase::Lift,
            manipulator: ManipulatorState::new(wire_length),
            warm_start: None,
            abort_reason: None,
        }
    }

    fn enter(&mut self, stage: Stage) {
        if stage != self.stage {
            self.stage = stage;
            self.stage_ticks = 0;
            self.warm_start = None;
            self.lost_ticks = 0;
        }
    }

    fn abort(&mut self, reason: AbortReason) {
        self.enter(Stage::Aborted);
        self.abort_reason = Some(reason);
    }
}

/// What happened during one [`step_mission`] call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    /// Stage that produced the command.
    pub stage: Stage,
    pub measurement: Option<Pose2>,
    pub filter: UpdateOutcome,
    pub target: Option<Pose2>,
    pub goal: Option<Pose2>,
    pub status: Option<SolveStatus>,
    pub solve_time: f64,
    pub iterations: usize,
    pub objective: f64,
    pub slack_max: f64,
    /// Barriers as given to the planner, with the planned states.
    pub barriers: Vec<BarrierSpec>,
    pub plan: Vec<Pose2>,
    pub slacks: Vec<f64>,
    pub manipulator: ManipulatorMode,
    pub abort: Option<AbortReason>,
}

impl TickReport {
    /// Report for a tick without a planner call.
    pub fn idle(stage: Stage) -> Self {
        Self {
            stage,
            measurement: None,
            filter: UpdateOutcome::NoMeasurement,
            target: None,
            goal: None,
            status: None,
            solve_time: 0.0,
            iterations: 0,
            objective: 0.0,
            slack_max: 0.0,
            barriers: Vec::new(),
            plan: Vec::new(),
            slacks: Vec::new(),
            manipulator: ManipulatorMode::Idle,
            abort: None,
        }
    }
}

/// World pose of the trolley from one keypoint frame.
pub fn camera_measurement(kps: &KeypointSet, robot: &Pose2, p: &PerceptionParams) -> Option<Pose2> {
    let pose = estimate_pose(kps, &p.intrinsics, &p.refine).ok()?;
    Some(compose_to_world(robot, &planar_from_camera(&pose), &p.camera_offset))
}

/// World pose of the trolley from one LiDAR scan.
pub fn lidar_measurement(cloud: &PointCloud, robot: &Pose2, p: &PerceptionParams, seed: u64) -> Option<Pose2> {
    let cropped = crop_cloud(cloud, &p.range_box);
    let model = ransac_plane(&cropped, &RansacParams { seed, ..p.ransac }).ok()?;
    let rel = plane_to_pose(&model, &cropped).ok()?;
    Some(compose_to_world(robot, &rel, &p.lidar_offset))
}

/// Smallest obstacle barrier value at `pose`, `+inf` without obstacles.
pub fn min_obstacle_barrier(pose: &Pose2, obstacles: &[crate::planner::Obstacle], d_safe: f64) -> f64 {
    obstacles.iter().map(|o| h_obstacle(pose, o, d_safe)).fold(f64::INFINITY, f64::min)
}

fn obstacle_barriers(s: &SensorBundle, p: &PlannerParams) -> Vec<BarrierSpec> {
    s.obstacles
        .iter()
        .map(|o| BarrierSpec::Obstacle { obstacle: *o, d_safe: p.d_safe + SAFETY_MARGIN_M, decay: p.obstacle_decay })
        .collect()
}

enum PlanOutcome {
    Planned(Command),
    Abort(AbortReason),
}

fn run_planner(
    ms: &mut MissionState,
    s: &SensorBundle,
    p: &MissionParams,
    goal: Pose2,
    view_target: Option<[f64; 2]>,
    report: &mut TickReport,
) -> PlanOutcome {
    let pp = &p.planner;
    let mut prob = NmpcProblem::new(s.robot_pose, goal);
    prob.horizon = pp.horizon;
    prob.terminal_weight = pp.terminal_weight;
    prob.control_weight = pp.control_weight;
    prob.slack_weight = pp.slack_weight;
    prob.solver = pp.solver;
    prob.barriers = obstacle_barriers(s, pp);
    prob.warm_start = ms.warm_start.clone().filter(|w| w.len() == pp.horizon);
    if let Some(t) = view_target {
        prob.barriers.push(BarrierSpec::View { target: t, theta_max: pp.theta_max, decay: pp.view_decay });
        if let Some(w) = pp.dock_terminal_weight {
            prob.terminal_weight = w;
        }
    }
    if ms.stage == Stage::Return {
        if let Some(w) = pp.return_terminal_weight {
            prob.terminal_weight = w;
        }
    }
    let result = if view_target.is_some() { plan_docking(&prob, &pp.model) } else { plan_approach(&prob, &pp.model) };
    report.barriers = prob.barriers;
    match result {
        Ok(sol) => {
            record_solution(report, &sol);
            ms.warm_start = Some(sol.shifted_controls());
            let [v, w] = sol.first_control();
            PlanOutcome::Planned(Command { v, w, fork: ForkCommand::Hold })
        }
        Err(PlanError::InfeasibleStart { index, h }) => PlanOutcome::Abort(AbortReason::InfeasibleStart { obstacle: index, h }),
        Err(e) => PlanOutcome::Abort(AbortReason::Planner { message: e.to_string() }),
    }
}

fn record_solution(report: &mut TickReport, sol: &NmpcSolution) {
    report.status = Some(sol.status);
    report.solve_time = sol.solve_time;
    report.iterations = sol.iterations;
    report.objective = sol.objective;
    report.slack_max = sol.max_abs_slack();
    report.plan = sol.states.clone();
    report.slacks = sol.slacks.clone();
}

fn pose_errors(robot: &Pose2, goal: &Pose2) -> (f64, f64) {
    (robot.distance(goal), angle_diff(robot.theta(), goal.theta()).abs())
}

/// Advances the mission by one tick.
pub fn step_mission(ms: &MissionState, s: &SensorBundle, p: &MissionParams) -> (MissionState, Command, TickReport) {
    let mut ms = ms.clone();
    let mut report = TickReport::idle(ms.stage);
    ms.tick_count += 1;
    if matches!(ms.stage, Stage::Done | Stage::Aborted) {
        report.abort = ms.abort_reason.clone();
        report.target = ms.target.pose();
        return (ms, Command::stop(ForkCommand::Hold), report);
    }
    ms.stage_ticks += 1;
    if ms.stage_ticks > p.budgets.for_stage(ms.stage) {
        let stage = ms.stage;
        ms.abort(AbortReason::TickBudget { stage });
        report.abort = ms.abort_reason.clone();
        return (ms, Command::stop(ForkCommand::Hold), report);
    }

    // Perception: camera while approaching, LiDAR once close.
    let robot = s.robot_pose;
    let measurement = match ms.stage {
        Stage::Approach => s.keypoints.as_ref().and_then(|k| camera_measurement(k, &robot, &p.perception)),
        Stage::Dock | Stage::Capture => s
            .cloud
            .as_ref()
            .and_then(|c| lidar_measurement(c, &robot, &p.perception, p.perception.ransac.seed.wrapping_add(ms.tick_count))),
        _ => None,
    };
    if matches!(ms.stage, Stage::Approach | Stage::Dock | Stage::Capture) {
        let (mut target, mut outcome) = update_target(&ms.target, measurement, s.time, &p.perception.gate);
        ms.rejections = if outcome == UpdateOutcome::Rejected { ms.rejections + 1 } else { 0 };
        // A bad first fix would otherwise gate out every later measurement.
        if ms.stage == Stage::Approach && ms.rejections >= p.reacquire_after {
            if let Some(m) = measurement {
                target = FilteredTarget::with_pose(m, s.time);
                outcome = UpdateOutcome::Initialized;
                ms.rejections = 0;
            }
        }
        ms.target = target;
        report.filter = outcome;
    }
    report.measurement = measurement;

    let cmd = match ms.stage {
        Stage::Approach => step_approach(&mut ms, s, p, &mut report),
        Stage::Dock => step_dock(&mut ms, s, p, &mut report),
        Stage::Capture => step_capture(&mut ms, s, p, &mut report),
        Stage::Return => step_return(&mut ms, s, p, &mut report),
        Stage::Done | Stage::Aborted => Command::stop(ForkCommand::Hold),
    };
    report.target = ms.target.pose();
    report.goal = ms.goal;
    report.manipulator = ms.manipulator.mode;
    report.abort = ms.abort_reason.clone();
    (ms, cmd, report)
}

fn planned_or_abort(ms: &mut MissionState, outcome: PlanOutcome, fork: ForkCommand) -> Command {
    match outcome {
        PlanOutcome::Planned(c) => Command { fork, ..c },
        PlanOutcome::Abort(r) => {
            ms.abort(r);
            Command::stop(fork)
        }
    }
}

fn step_approach(ms: &mut MissionState, s: &SensorBundle, p: &MissionParams, report: &mut TickReport) -> Command {
    let Some(target) = ms.target.pose() else {
        // Nothing seen yet: turn in place, which leaves every obstacle barrier unchanged.
        return Command { v: 0.0, w: p.search_rate, fork: ForkCommand::Hold };
    };
    let goal = approach_goal(&target, p.approach_standoff);
    ms.goal = Some(goal);
    let d_goal = s.robot_pose.position().metric_distance(&goal.position());
    let d_trolley = s.robot_pose.position().metric_distance(&target.position());
    if d_goal < p.dock_switch_radius && (p.dock_band[0]..=p.dock_band[1]).contains(&d_trolley) {
        ms.enter(Stage::Dock);
        report.stage = Stage::Dock;
        return step_dock(ms, s, p, report);
    }
    let outcome = run_planner(ms, s, p, goal, None, report);
    planned_or_abort(ms, outcome, ForkCommand::Hold)
}

/// Any of these sends docking back to the approach stage.
fn dock_lost(ms: &MissionState, s: &SensorBundle, p: &MissionParams, report: &TickReport) -> bool {
    let Some(target) = ms.target.pose() else { return true };
    report.filter == UpdateOutcome::Rejected
        || ms.lost_ticks > p.lost_ticks
        || s.robot_pose.position().metric_distance(&target.position()) > p.dock_max_range
}

fn step_dock(ms: &mut MissionState, s: &SensorBundle, p: &MissionParams, report: &mut TickReport) -> Command {
    ms.lost_ticks = if report.measurement.is_some() { 0 } else { ms.lost_ticks + 1 };
    if dock_lost(ms, s, p, report) {
        ms.enter(Stage::Approach);
        report.stage = Stage::Approach;
        return step_approach(ms, s, p, report);
    }
    let target = ms.target.pose().expect("checked by dock_lost");
    let goal = docking_pose_from_trolley(&target, p.docking_standoff);
    ms.goal = Some(goal);
    let outcome = run_planner(ms, s, p, goal, Some([target.x, target.y]), report);
    let cmd = planned_or_abort(ms, outcome, ForkCommand::Hold);
    if ms.stage == Stage::Dock && settled(&s.robot_pose, &goal, &cmd, p) {
        ms.enter(Stage::Capture);
        ms.capture_phase = CapturePhase::Lift;
        report.stage = Stage::Capture;
        return step_capture(ms, s, p, report);
    }
    cmd
}

/// Within the capture tolerances and no longer being driven.
fn settled(robot: &Pose2, goal: &Pose2, cmd: &Command, p: &MissionParams) -> bool {
    let (de, ae) = pose_errors(robot, goal);
    de < p.capture_pos_tol && ae < p.capture_ang_tol && cmd.v.abs() < p.settle_speed && cmd.w.abs() < p.settle_rate
}

fn step_capture(ms: &mut MissionState, s: &SensorBundle, p: &MissionParams, report: &mut TickReport) -> Command {
    let target = ms.target.pose().expect("capture starts with a target");
    let goal = docking_pose_from_trolley(&target, p.docking_standoff);
    ms.goal = Some(goal);
    match ms.capture_phase {
        CapturePhase::Lift => {
            ms.manipulator = manipulator_update(&ms.manipulator, ForkCommand::Lift, s.wire_length, &p.manipulator);
            match ms.manipulator.mode {
                ManipulatorMode::Grasped => {
                    ms.enter(Stage::Return);
                    ms.goal = Some(p.return_spot);
                    report.stage = Stage::Return;
                    // The lift is done; start driving on the next tick.
                    Command::stop(ForkCommand::Hold)
                }
                // Stalled low, or rose to the end stop without meeting the trolley.
                ManipulatorMode::Blocked | ManipulatorMode::AtPosition => {
                    ms.failed_lifts += 1;
                    if ms.failed_lifts >= 2 {
                        ms.abort(AbortReason::ManipulatorBlocked);
                        Command::stop(ForkCommand::Hold)
                    } else {
                        ms.capture_phase = CapturePhase::Lower;
                        ms.manipulator.stall_count = 0;
                        Command::stop(ForkCommand::Lower)
                    }
                }
                _ => Command::stop(ForkCommand::Lift),
            }
        }
        CapturePhase::Lower => {
            ms.manipulator = manipulator_update(&ms.manipulator, ForkCommand::Lower, s.wire_length, &p.manipulator);
            if ms.manipulator.mode == ManipulatorMode::AtPosition {
                ms.capture_phase = CapturePhase::Realign;
                ms.warm_start = None;
                Command::stop(ForkCommand::Hold)
            } else {
                Command::stop(ForkCommand::Lower)
            }
        }
        CapturePhase::Realign => {
            let outcome = run_planner(ms, s, p, goal, Some([target.x, target.y]), report);
            let cmd = planned_or_abort(ms, outcome, ForkCommand::Hold);
            if ms.stage == Stage::Capture && settled(&s.robot_pose, &goal, &cmd, p) {
                ms.capture_phase = CapturePhase::Lift;
                ms.manipulator.stall_count = 0;
                return Command::stop(ForkCommand::Lift);
            }
            cmd
        }
    }
}

fn step_return(ms: &mut MissionState, s: &SensorBundle, p: &MissionParams, report: &mut TickReport) -> Command {
    let goal = p.return_spot;
    ms.goal = Some(goal);
    if s.robot_pose.position().metric_distance(&goal.position()) < p.return_tol {
        ms.enter(Stage::Done);
        return Command::stop(ForkCommand::Hold);
    }
    let outcome = run_planner(ms, s, p, goal, None, report);
    planned_or_abort(ms, outcome, ForkCommand::Hold)
}

/// View barrier value for a report, if docking.
pub fn report_h_view(pose: &Pose2, report: &TickReport) -> Option<f64> {
    report.barriers.iter().find_map(|b| match b {
        BarrierSpec::View { target, theta_max, .. } => h_view(pose, *target, *theta_max).ok(),
        _ => None,
    })
}
