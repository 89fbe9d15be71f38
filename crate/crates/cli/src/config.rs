//! Scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use trolley_core::geometry::Pose2;
use trolley_core::mission::{MissionParams, PerceptionParams, PlannerParams};
use trolley_core::planner::{NmpcProblem, Obstacle};
use trolley_core::sim::{ForkSim, Mover, SensorConfig, World};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    /// serde_json reports the line and column of the offending token.
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: invalid scenario: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub robot: Pose2,
    pub trolley: Pose2,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub movers: Vec<Mover>,
    #[serde(default)]
    pub fork: ForkSim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ticks_max")]
    pub ticks_max: u64,
    pub world: WorldConfig,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub planner: PlannerParams,
    /// Camera intrinsics and sensor offsets are taken from `sensors`.
    #[serde(default)]
    pub perception: PerceptionParams,
    #[serde(default)]
    pub mission: MissionParams,
}

fn default_ticks_max() -> u64 {
    4000
}

impl Scenario {
    pub fn from_json(text: &str, path: &str) -> Result<Self, ConfigError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate().map_err(|message| ConfigError::Invalid { path: path.to_string(), message })?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
        Self::from_json(&text, &p.display().to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        let pl = &self.planner;
        pl.model.validate().map_err(|e| e.to_string())?;
        let mut prob = NmpcProblem::new(self.world.robot, self.world.trolley);
        prob.horizon = pl.horizon;
        prob.terminal_weight = pl.terminal_weight;
        prob.control_weight = pl.control_weight;
        prob.slack_weight = pl.slack_weight;
        prob.validate().map_err(|e| e.to_string())?;
        if !(pl.d_safe > 0.0) {
            return Err("planner.d_safe must be positive".into());
        }
        if !(pl.theta_max > 0.0 && pl.theta_max < std::f64::consts::PI) {
            return Err("planner.theta_max must lie in (0, pi)".into());
        }
        for (name, d) in [("obstacle_decay", pl.obstacle_decay), ("view_decay", pl.view_decay)] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(format!("planner.{name} must lie in (0, 1]"));
            }
        }
        let m = &self.mission;
        if !(m.docking_standoff > 0.0 && m.approach_standoff > m.docking_standoff) {
            return Err("mission.approach_standoff must exceed mission.docking_standoff > 0".into());
        }
        if self.sensors.camera.template.len() < 4 {
            return Err("sensors.camera.template needs at least 4 keypoints".into());
        }
        for (i, mv) in self.world.movers.iter().enumerate() {
            if mv.waypoints.is_empty() || !(mv.speed >= 0.0) {
                return Err(format!("world.movers[{i}] needs waypoints and a non-negative speed"));
            }
        }
        Ok(())
    }

    /// Mission parameters with the planner and perception sections folded in.
    pub fn mission_params(&self) -> MissionParams {
        let mut m = self.mission;
        m.planner = self.planner;
        m.perception = PerceptionParams {
            intrinsics: self.sensors.camera.intrinsics,
            camera_offset: self.sensors.camera.offset,
            lidar_offset: self.sensors.lidar.offset,
            ..self.perception
        };
        m
    }

    pub fn world(&self, seed: u64) -> World {
        let mut w = World::new(self.world.robot, self.world.trolley, self.planner.model.dt, seed);
        w.obstacles = self.world.obstacles.clone();
        w.humans = self.world.movers.clone();
        w.fork = self.world.fork;
        w.docking_standoff = self.mission.docking_standoff;
        w
    }
}
