//! Safety-critical receding-horizon planner.
//!
//! Both stages solve a direct multiple-shooting problem over the unicycle
//! model. The approach stage constrains every step with the discrete obstacle
//! barrier; the docking stage adds a view barrier softened by a per-step
//! slack.

pub mod barrier;
pub mod dynamics;
pub mod nlp;
pub mod qp;

use std::time::Instant;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2;
pub use barrier::{cbf_residual, h_obstacle, h_view};
pub use dynamics::{dd_step, Dynamics, LinearDynamics, Unicycle};
pub use nlp::{solve_nlp, Iterate, NlpOutcome, NlpProblem, Row, SolverOptions, TraceEntry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("start state inside the safe distance of obstacle {index} (h = {h})")]
    InfeasibleStart { index: usize, h: f64 },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("view target coincides with the robot position")]
    TargetCoincident,
}

/// Point obstacle moving with constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl Obstacle {
    pub fn fixed(x: f64, y: f64) -> Self {
        Self { center: [x, y], velocity: [0.0, 0.0] }
    }

    /// Position extrapolated `t` seconds ahead.
    pub fn predict(&self, t: f64) -> [f64; 2] {
        [self.center[0] + t * self.velocity[0], self.center[1] + t * self.velocity[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBox {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    pub dt: f64,
    pub v_bounds: [f64; 2],
    pub w_bounds: [f64; 2],
    pub state_box: Option<StateBox>,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            dt: 0.1,
            v_bounds: [-0.3, 0.6],
            w_bounds: [-1.0, 1.0],
            state_box: None,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidProblem(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.v_bounds[0] <= self.v_bounds[1]) || !self.v_bounds.iter().all(|v| v.is_finite()) {
            return bad("v_bounds must be finite with v_min <= v_max");
        }
        if !(self.w_bounds[0] <= self.w_bounds[1]) || !self.w_bounds.iter().all(|v| v.is_finite()) {
            return bad("w_bounds must be finite with w_min <= w_max");
        }
        if let Some(b) = &self.state_box {
            if (0..3).any(|i| !(b.lower[i] <= b.upper[i])) {
                return bad("state_box lower must not exceed upper");
            }
        }
        Ok(())
    }

    pub fn clamp_control(&self, u: [f64; 2]) -> [f64; 2] {
        [
            u[0].clamp(self.v_bounds[0], self.v_bounds[1]),
            u[1].clamp(self.w_bounds[0], self.w_bounds[1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BarrierSpec {
    Obstacle { obstacle: Obstacle, d_safe: f64, decay: f64 },
    View { target: [f64; 2], theta_max: f64, decay: f64 },
}

impl BarrierSpec {
    pub fn decay(&self) -> f64 {
        match self {
            BarrierSpec::Obstacle { decay, .. } | BarrierSpec::View { decay, .. } => *decay,
        }
    }

    fn validate(&self) -> Result<(), PlanError> {
        let d = self.decay();
        if !(d > 0.0 && d <= 1.0) {
            return Err(PlanError::InvalidProblem(format!("decay {d} outside (0, 1]")));
        }
        match self {
            BarrierSpec::Obstacle { obstacle, d_safe, .. } => {
                if !(*d_safe > 0.0) || !obstacle.center.iter().chain(&obstacle.velocity).all(|v| v.is_finite()) {
                    return Err(PlanError::InvalidProblem("obstacle needs finite data and d_safe > 0".into()));
                }
            }
            BarrierSpec::View { target, theta_max, .. } => {
                if !(*theta_max > 0.0 && *theta_max < std::f64::consts::PI) || !target.iter().all(|v| v.is_finite()) {
                    return Err(PlanError::InvalidProblem("view barrier needs theta_max in (0, pi)".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmpcProblem {
    pub horizon: usize,
    pub x_init: Pose2,
    pub x_goal: Pose2,
    /// Row-major `P_f`.
    pub terminal_weight: [[f64; 3]; 3],
    /// Row-major `Q_u`.
    pub control_weight: [[f64; 2]; 2],
    #[serde(default)]
    pub barriers: Vec<BarrierSpec>,
    #[serde(default = "default_slack_weight")]
    pub slack_weight: f64,
    /// Initial control guess, one pair per step.
    #[serde(default)]
    pub warm_start: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_slack_weight() -> f64 {
    1000.0
}

impl NmpcProblem {
    /// Problem with the default horizon and weights and no barriers.
    pub fn new(x_init: Pose2, x_goal: Pose2) -> Self {
        Self {
            horizon: 20,
            x_init,
            x_goal,
            terminal_weight: [[10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 2.0]],
            control_weight: [[1.0, 0.0], [0.0, 0.5]],
            barriers: Vec::new(),
            slack_weight: default_slack_weight(),
            warm_start: None,
            solver: SolverOptions::default(),
        }
    }

    pub fn p_f(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.terminal_weight[i][j])
    }

    pub fn q_u(&self) -> Matrix2<f64> {
        Matrix2::from_fn(|i, j| self.control_weight[i][j])
    }

    pub fn has_view(&self) -> bool {
        self.barriers.iter().any(|b| matches!(b, BarrierSpec::View { .. }))
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidProblem(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        let p = self.p_f();
        let q = self.q_u();
        if (p - p.transpose()).amax() > 1e-12 || p.symmetric_eigenvalues().min() < -1e-12 {
            return bad("terminal_weight must be symmetric positive semidefinite");
        }
        if (q - q.transpose()).amax() > 1e-12 || q.symmetric_eigenvalues().min() <= 0.0 {
            return bad("control_weight must be symmetric positive definite");
        }
        if self.has_view() && !(self.slack_weight > 0.0) {
            return bad("slack_weight must be positive with a view barrier");
        }
        if let Some(ws) = &self.warm_start {
            if ws.len() != self.horizon {
                return bad("warm_start length must equal the horizon");
            }
        }
        for b in &self.barriers {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmpcSolution {
    pub states: Vec<Pose2>,
    pub controls: Vec<[f64; 2]>,
    /// Empty unless the problem has a view barrier.
    pub slacks: Vec<f64>,
    pub status: SolveStatus,
    pub solve_time: f64,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: f64,
}

impl NmpcSolution {
    /// Command to execute now.
    pub fn first_control(&self) -> [f64; 2] {
        self.controls[0]
    }

    /// Controls shifted one step, repeating the last, for the next solve.
    pub fn shifted_controls(&self) -> Vec<[f64; 2]> {
        let mut u: Vec<_> = self.controls.iter().skip(1).copied().collect();
        u.push(*self.controls.last().expect("non-empty horizon"));
        u
    }

    pub fn max_abs_slack(&self) -> f64 {
        self.slacks.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// Approach-stage problem: obstacle barriers only.
pub fn plan_approach(prob: &NmpcProblem, model: &RobotModel) -> Result<NmpcSolution, PlanError> {
    if prob.has_view() {
        return Err(PlanError::InvalidProblem("view barriers belong to plan_docking".into()));
    }
    plan(prob, model)
}

/// Docking-stage problem: obstacle barriers plus slackened view barriers.
pub fn plan_docking(prob: &NmpcProblem, model: &RobotModel) -> Result<NmpcSolution, PlanError> {
    plan(prob, model)
}

fn plan(prob: &NmpcProblem, model: &RobotModel) -> Result<NmpcSolution, PlanError> {
    let start = Instant::now();
    model.validate()?;
    prob.validate()?;
    let x0 = &prob.x_init;
    for (index, b) in prob.barriers.iter().enumerate() {
        match b {
            BarrierSpec::Obstacle { obstacle, d_safe, .. } => {
                let h = h_obstacle(x0, obstacle, *d_safe);
                if !(h > 0.0) {
                    return Err(PlanError::InfeasibleStart { index, h });
                }
            }
            BarrierSpec::View { target, theta_max, .. } => {
                h_view(x0, *target, *theta_max)?;
            }
        }
    }

    let nlp = build_nlp(prob, model);
    let init_u: Vec<Vector2<f64>> = match &prob.warm_start {
        Some(ws) => ws.iter().map(|u| Vector2::from(model.clamp_control(*u))).collect(),
        None => vec![Vector2::zeros(); prob.horizon],
    };
    let init = nlp.initial_iterate(init_u);
    let out = solve_nlp(&nlp, &init, &prob.solver);

    let states = out.iterate.states.iter().map(|s| Pose2::new(s.x, s.y, s.z)).collect();
    let controls = out
        .iterate
        .controls
        .iter()
        .map(|u| model.clamp_control([u.x, u.y]))
        .collect();
    Ok(NmpcSolution {
        states,
        controls,
        slacks: out.iterate.slacks.clone(),
        status: out.status,
        solve_time: start.elapsed().as_secs_f64(),
        objective: out.objective,
        iterations: out.iterations,
        kkt: out.kkt,
    })
}

/// Whether a barrier row can be active for any control-feasible trajectory.
///
/// Distances change by at most `delta` per step, so with `d_k >= L` the
/// residual is bounded below by `lam L^2 - 2 delta L + delta^2 - lam s^2`.
fn obstacle_row_needed(dist0: f64, k: usize, delta: f64, d_safe: f64, lam: f64) -> bool {
    let l = dist0 - k as f64 * delta;
    if l < delta || l < delta / lam {
        return true;
    }
    lam * l * l - 2.0 * delta * l + delta * delta - lam * d_safe * d_safe <= 1e-6
}

/// Shooting NLP for `prob`, with obstacle rows that can never bind screened out.
pub fn build_nlp(prob: &NmpcProblem, model: &RobotModel) -> NlpProblem<Unicycle> {
    let n = prob.horizon;
    let dt = model.dt;
    let x0 = Vector3::new(prob.x_init.x, prob.x_init.y, prob.x_init.theta());
    let vmax = model.v_bounds[0].abs().max(model.v_bounds[1].abs());
    let mut rows = Vec::new();
    for b in &prob.barriers {
        match b {
            BarrierSpec::Obstacle { obstacle, d_safe, decay } => {
                let speed = Vector2::from(obstacle.velocity).norm();
                let delta = dt * (vmax + speed);
                let dist0 = (Vector2::new(x0.x, x0.y) - Vector2::from(obstacle.center)).norm();
                for k in 0..n {
                    if obstacle_row_needed(dist0, k, delta, *d_safe, *decay) {
                        rows.push(Row::Obstacle {
                            k,
                            center_now: Vector2::from(obstacle.predict(k as f64 * dt)),
                            center_next: Vector2::from(obstacle.predict((k + 1) as f64 * dt)),
                            d_safe: *d_safe,
                            decay: *decay,
                        });
                    }
                }
            }
            BarrierSpec::View { target, theta_max, decay } => {
                for k in 0..n {
                    rows.push(Row::View {
                        k,
                        target: Vector2::from(*target),
                        cos_max: theta_max.cos(),
                        decay: *decay,
                    });
                }
            }
        }
    }
    if let Some(sb) = &model.state_box {
        for k in 0..n {
            for axis in 0..3 {
                if sb.lower[axis].is_finite() {
                    rows.push(Row::StateBound { k, axis, bound: sb.lower[axis], upper: false });
                }
                if sb.upper[axis].is_finite() {
                    rows.push(Row::StateBound { k, axis, bound: sb.upper[axis], upper: true });
                }
            }
        }
    }
    NlpProblem {
        dynamics: Unicycle,
        dt,
        horizon: n,
        x0,
        goal: Vector3::new(prob.x_goal.x, prob.x_goal.y, prob.x_goal.theta()),
        terminal_weight: prob.p_f(),
        control_weight: prob.q_u(),
        slack_weight: prob.has_view().then_some(prob.slack_weight),
        rows,
        u_lower: Vector2::new(model.v_bounds[0], model.w_bounds[0]),
        u_upper: Vector2::new(model.v_bounds[1], model.w_bounds[1]),
    }
}
