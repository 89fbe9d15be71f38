//! Independent re-evaluation of barrier constraints on logged data.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trolley_core::geometry::Pose2;
use trolley_core::planner::{h_obstacle, h_view, BarrierSpec, NmpcSolution, Obstacle, SolveStatus};

use crate::runner::LogRecord;

/// Slack on the decay bound for solver round-off.
pub const DECAY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub ticks: usize,
    /// Executed states with some obstacle barrier below zero.
    pub obstacle_violations: usize,
    pub min_h_ob: Option<f64>,
    pub plans_checked: usize,
    /// Planned steps times barriers.
    pub steps_checked: usize,
    pub decay_violations: usize,
    /// Smallest `h(x_{k+1}) - (1 - λ) h(x_k)` (minus the slack for the view barrier).
    pub worst_decay_residual: Option<f64>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.obstacle_violations == 0 && self.decay_violations == 0
    }

    fn note_h(&mut self, h: f64, floor: f64) {
        self.min_h_ob = Some(self.min_h_ob.map_or(h, |m: f64| m.min(h)));
        if h < floor {
            self.obstacle_violations += 1;
        }
    }

    fn note_decay(&mut self, r: f64) {
        self.steps_checked += 1;
        self.worst_decay_residual = Some(self.worst_decay_residual.map_or(r, |m: f64| m.min(r)));
        if r < -DECAY_TOL {
            self.decay_violations += 1;
        }
    }

    /// Decay bound of every barrier along one planned trajectory.
    pub fn check_plan(&mut self, states: &[Pose2], slacks: &[f64], barriers: &[BarrierSpec], dt: f64) {
        self.plans_checked += 1;
        for b in barriers {
            for k in 0..states.len().saturating_sub(1) {
                let (x0, x1) = (&states[k], &states[k + 1]);
                let r = match b {
                    BarrierSpec::Obstacle { obstacle, d_safe, decay } => {
                        let at = |j: usize| {
                            let p = obstacle.predict(j as f64 * dt);
                            Obstacle::fixed(p[0], p[1])
                        };
                        h_obstacle(x1, &at(k + 1), *d_safe) - (1.0 - decay) * h_obstacle(x0, &at(k), *d_safe)
                    }
                    BarrierSpec::View { target, theta_max, decay } => {
                        let (Ok(h0), Ok(h1)) = (h_view(x0, *target, *theta_max), h_view(x1, *target, *theta_max)) else {
                            continue;
                        };
                        h1 - (1.0 - decay) * h0 - slacks.get(k).copied().unwrap_or(0.0)
                    }
                };
                self.note_decay(r);
            }
        }
    }
}

/// Checks executed states against the obstacles seen at each tick, and
/// every feasible planned trajectory against its decay bounds.
pub fn verify_records(records: &[LogRecord], d_safe: f64, dt: f64) -> VerifyReport {
    let mut rep = VerifyReport::default();
    for (i, r) in records.iter().enumerate() {
        rep.ticks += 1;
        for o in &r.sensors.obstacles {
            rep.note_h(h_obstacle(&r.robot, o, d_safe), 0.0);
        }
        // The state reached by this tick's command, against the obstacles one tick later.
        if let Some(next) = records.get(i + 1) {
            for o in &next.sensors.obstacles {
                rep.note_h(h_obstacle(&next.robot, o, d_safe), 0.0);
            }
        }
        if matches!(r.report.status, Some(SolveStatus::Optimal | SolveStatus::MaxIter)) {
            rep.check_plan(&r.report.plan, &r.report.slacks, &r.report.barriers, dt);
        }
    }
    rep
}

pub fn read_log(path: &Path) -> std::io::Result<Vec<LogRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// A single planner solution against its problem's barriers.
pub fn verify_solution(sol: &NmpcSolution, barriers: &[BarrierSpec], dt: f64) -> VerifyReport {
    let mut rep = VerifyReport::default();
    for b in barriers {
        if let BarrierSpec::Obstacle { obstacle, d_safe, .. } = b {
            for (k, x) in sol.states.iter().enumerate() {
                let p = obstacle.predict(k as f64 * dt);
                rep.note_h(h_obstacle(x, &Obstacle::fixed(p[0], p[1]), *d_safe), -DECAY_TOL);
            }
        }
    }
    rep.ticks = sol.states.len();
    rep.check_plan(&sol.states, &sol.slacks, barriers, dt);
    rep
}
