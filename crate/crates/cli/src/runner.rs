//! Closed-loop mission runs and their artifacts.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trolley_core::geometry::{angle_diff, Pose2};
use trolley_core::mission::{
    min_obstacle_barrier, report_h_view, step_mission, AbortReason, Command, ForkCommand, MissionState, Stage, TickReport,
};
use trolley_core::planner::{Obstacle, SolveStatus};
use trolley_core::sim::{sense, tick, SensorBundle};

use crate::config::Scenario;

/// One row of `trajectory.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v_cmd: f64,
    pub w_cmd: f64,
    pub stage: String,
    /// Empty without obstacles.
    pub min_h_ob: Option<f64>,
    /// Present while the view barrier is active.
    pub h_view: Option<f64>,
    pub slack_max: f64,
}

/// Compact view of what the sensors delivered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSummary {
    pub robot_pose: Pose2,
    pub keypoints: Option<usize>,
    pub cloud_points: Option<usize>,
    pub obstacles: Vec<Obstacle>,
    pub wire_length: f64,
}

impl SensorSummary {
    fn of(s: &SensorBundle) -> Self {
        Self {
            robot_pose: s.robot_pose,
            keypoints: s.keypoints.as_ref().map(|k| k.image_points.len()),
            cloud_points: s.cloud.as_ref().map(|c| c.len()),
            obstacles: s.obstacles.clone(),
            wire_length: s.wire_length,
        }
    }
}

/// One line of `log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub tick: u64,
    pub t: f64,
    pub robot: Pose2,
    pub trolley: Pose2,
    pub sensors: SensorSummary,
    pub command: Command,
    pub report: TickReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Done,
    Aborted,
    TickLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub abort_reason: Option<AbortReason>,
    pub ticks: u64,
    pub duration: f64,
    pub capture_success: bool,
    /// True robot pose error to the true docking pose when the fork grasped.
    pub docking_pos_error: Option<f64>,
    pub docking_ang_error: Option<f64>,
    /// Start time of each stage that was entered.
    pub stage_start: Vec<(Stage, f64)>,
    pub d_safe: f64,
    pub min_h_ob: Option<f64>,
    pub solves: usize,
    pub status_counts: [usize; 3],
    pub max_solve_time: f64,
    pub mean_solve_time: f64,
    pub max_slack: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<TrajectoryRow>,
    pub records: Vec<LogRecord>,
    pub metrics: Metrics,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        match self.metrics.outcome {
            Outcome::Done => 0,
            Outcome::Aborted | Outcome::TickLimit => 2,
        }
    }
}

fn row(t: f64, robot: &Pose2, cmd: &Command, report: &TickReport, obstacles: &[Obstacle], d_safe: f64) -> TrajectoryRow {
    TrajectoryRow {
        t,
        x: robot.x,
        y: robot.y,
        theta: robot.theta(),
        v_cmd: cmd.v,
        w_cmd: cmd.w,
        stage: report.stage.name().to_string(),
        min_h_ob: (!obstacles.is_empty()).then(|| min_obstacle_barrier(robot, obstacles, d_safe)),
        h_view: report_h_view(robot, report),
        slack_max: report.slack_max,
    }
}

/// Runs the scenario to `Done`, `Aborted` or the tick limit.
pub fn run_scenario(sc: &Scenario, seed: Option<u64>, ticks_max: Option<u64>) -> RunOutput {
    let seed = seed.unwrap_or(sc.seed);
    let ticks_max = ticks_max.unwrap_or(sc.ticks_max);
    let params = sc.mission_params();
    let d_safe = params.planner.d_safe;
    let mut world = sc.world(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ms = MissionState::new(world.fork.l);
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut stage_start = vec![(Stage::Approach, 0.0)];
    let mut docking_error = None;

    let mut ticks = 0;
    while ticks < ticks_max && !matches!(ms.stage, Stage::Done | Stage::Aborted) {
        let bundle = sense(&world, &sc.sensors, &mut rng);
        let (next, cmd, report) = step_mission(&ms, &bundle, &params);
        let obstacles = world.all_obstacles();
        rows.push(row(world.time, &world.robot, &cmd, &report, &obstacles, d_safe));
        records.push(LogRecord {
            tick: ticks,
            t: world.time,
            robot: world.robot,
            trolley: world.trolley,
            sensors: SensorSummary::of(&bundle),
            command: cmd,
            report,
        });
        let (was_attached, robot, goal) = (world.attached.is_some(), world.robot, world.true_docking_pose());
        world = tick(&world, &cmd);
        if !was_attached && world.attached.is_some() {
            docking_error = Some((robot.distance(&goal), angle_diff(robot.theta(), goal.theta()).abs()));
        }
        if next.stage != ms.stage {
            stage_start.push((next.stage, world.time));
        }
        ms = next;
        ticks += 1;
    }
    // Final executed state, so that every visited pose appears in the CSV.
    let stop = Command::stop(ForkCommand::Hold);
    let mut last = TickReport::idle(ms.stage);
    last.abort = ms.abort_reason.clone();
    rows.push(row(world.time, &world.robot, &stop, &last, &world.all_obstacles(), d_safe));

    let solve_times: Vec<f64> = records.iter().filter(|r| r.report.status.is_some()).map(|r| r.report.solve_time).collect();
    let mut status_counts = [0; 3];
    for r in &records {
        match r.report.status {
            Some(SolveStatus::Optimal) => status_counts[0] += 1,
            Some(SolveStatus::MaxIter) => status_counts[1] += 1,
            Some(SolveStatus::Infeasible) => status_counts[2] += 1,
            None => {}
        }
    }
    let outcome = match ms.stage {
        Stage::Done => Outcome::Done,
        Stage::Aborted => Outcome::Aborted,
        _ => Outcome::TickLimit,
    };
    let min_h_ob = rows.iter().filter_map(|r| r.min_h_ob).reduce(f64::min);
    let metrics = Metrics {
        scenario: sc.name.clone(),
        seed,
        outcome,
        abort_reason: ms.abort_reason.clone(),
        ticks,
        duration: world.time,
        capture_success: world.attached.is_some(),
        docking_pos_error: docking_error.map(|e| e.0),
        docking_ang_error: docking_error.map(|e| e.1),
        stage_start,
        d_safe,
        min_h_ob,
        solves: solve_times.len(),
        status_counts,
        max_solve_time: solve_times.iter().cloned().fold(0.0, f64::max),
        mean_solve_time: solve_times.iter().fold(0.0, |a, b| a + b) / solve_times.len().max(1) as f64,
        max_slack: records.iter().map(|r| r.report.slack_max).fold(0.0, f64::max),
    };
    RunOutput { rows, records, metrics }
}

pub fn write_csv(rows: &[TrajectoryRow], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_outputs(out: &RunOutput, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&out.rows, &dir.join("trajectory.csv")).map_err(std::io::Error::other)?;
    let mut log = std::io::BufWriter::new(std::fs::File::create(dir.join("log.jsonl"))?);
    for r in &out.records {
        serde_json::to_writer(&mut log, r)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&out.metrics)?)?;
    Ok(())
}
