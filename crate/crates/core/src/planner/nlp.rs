//! Multiple-shooting SQP.
//!
//! Decision variables are the states `x_1..x_N` (with `x_0` fixed), the
//! controls and, with view rows, one slack per step. Each iteration solves a
//! convexified QP with the linearized dynamics condensed out, then takes an
//! Armijo step on the L1 merit function.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::barrier::{obstacle_terms, view_terms};
use super::dynamics::{Dynamics, Matrix5};
use super::qp::{ElasticQp, QpOptions};
use super::SolveStatus;
use crate::geometry::wrap_angle;

/// Rollout rows below this are treated as violated.
const FEAS_TOL: f64 = 1e-7;
const ELASTIC_WEIGHT: f64 = 1e4;
const EIG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub kkt_tol: f64,
    /// Tighter bound on constraint violation, so the rollout of the returned
    /// controls reproduces the optimized states.
    pub primal_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            kkt_tol: 1e-6,
            primal_tol: 1e-9,
        }
    }
}

/// Inequality row `c >= 0` coupling steps `k` and `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Row {
    /// `h(x_{k+1}) - (1 - decay) h(x_k)` for the obstacle barrier.
    Obstacle {
        k: usize,
        center_now: Vector2<f64>,
        center_next: Vector2<f64>,
        d_safe: f64,
        decay: f64,
    },
    /// `h(x_{k+1}) - (1 - decay) h(x_k) - delta_k` for the view barrier.
    View {
        k: usize,
        target: Vector2<f64>,
        cos_max: f64,
        decay: f64,
    },
    /// Bound on one coordinate of `x_{k+1}`.
    StateBound { k: usize, axis: usize, bound: f64, upper: bool },
}

struct RowEval {
    k: usize,
    value: f64,
    g_now: Vector3<f64>,
    g_next: Vector3<f64>,
    h_now: Matrix3<f64>,
    h_next: Matrix3<f64>,
    slack: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub states: Vec<Vector3<f64>>,
    pub controls: Vec<Vector2<f64>>,
    pub slacks: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub merit: f64,
    pub kkt: f64,
    pub primal: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct NlpOutcome {
    /// Dynamically consistent: states are the rollout of the controls.
    pub iterate: Iterate,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub kkt: f64,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone)]
pub struct NlpProblem<D> {
    pub dynamics: D,
    pub dt: f64,
    pub horizon: usize,
    pub x0: Vector3<f64>,
    pub goal: Vector3<f64>,
    pub terminal_weight: Matrix3<f64>,
    pub control_weight: Matrix2<f64>,
    /// `Some(w)` adds one slack per step with cost `w * delta^2`.
    pub slack_weight: Option<f64>,
    pub rows: Vec<Row>,
    pub u_lower: Vector2<f64>,
    pub u_upper: Vector2<f64>,
}

struct Eval {
    rows: Vec<RowEval>,
    defects: Vec<Vector3<f64>>,
    objective: f64,
}

impl<D: Dynamics> NlpProblem<D> {
    pub fn terminal_error(&self, x_n: &Vector3<f64>) -> Vector3<f64> {
        let e = x_n - self.goal;
        Vector3::new(e.x, e.y, wrap_angle(e.z))
    }

    /// `1/2 e' P_f e + sum 1/2 u' Q_u u + w sum delta^2`.
    pub fn objective(&self, it: &Iterate) -> f64 {
        let e = self.terminal_error(&it.states[self.horizon]);
        let mut f = 0.5 * e.dot(&(self.terminal_weight * e));
        for u in &it.controls {
            f += 0.5 * u.dot(&(self.control_weight * u));
        }
        if let Some(w) = self.slack_weight {
            f += w * it.slacks.iter().map(|d| d * d).sum::<f64>();
        }
        f
    }

    /// Objective gradient laid out like an iterate; only the last state entry is nonzero.
    pub fn objective_gradient(&self, it: &Iterate) -> Iterate {
        let n = self.horizon;
        let mut states = vec![Vector3::zeros(); n + 1];
        states[n] = self.terminal_weight * self.terminal_error(&it.states[n]);
        let controls = it.controls.iter().map(|u| self.control_weight * u).collect();
        let w = self.slack_weight.unwrap_or(0.0);
        let slacks = it.slacks.iter().map(|d| 2.0 * w * d).collect();
        Iterate { states, controls, slacks }
    }

    pub fn rollout(&self, controls: &[Vector2<f64>]) -> Vec<Vector3<f64>> {
        let mut xs = Vec::with_capacity(controls.len() + 1);
        xs.push(self.x0);
        for (k, u) in controls.iter().enumerate() {
            xs.push(self.dynamics.step(&xs[k], u, self.dt));
        }
        xs
    }

    /// Rollout of `controls` with the smallest slacks that satisfy the view rows.
    pub fn initial_iterate(&self, controls: Vec<Vector2<f64>>) -> Iterate {
        let states = self.rollout(&controls);
        let slacks = if self.slack_weight.is_some() { vec![0.0; self.horizon] } else { Vec::new() };
        let mut it = Iterate { states, controls, slacks };
        self.fit_slacks(&mut it);
        it
    }

    /// Optimal slacks for fixed states: `min(0, tightest view residual)`.
    fn fit_slacks(&self, it: &mut Iterate) {
        if it.slacks.is_empty() {
            return;
        }
        let mut need = vec![f64::INFINITY; self.horizon];
        for row in &self.rows {
            if let Row::View { .. } = row {
                let r = self.eval_row(row, it, false);
                need[r.k] = need[r.k].min(r.value);
            }
        }
        for (d, n) in it.slacks.iter_mut().zip(need) {
            *d = n.min(0.0);
        }
    }

    fn eval_row(&self, row: &Row, it: &Iterate, with_slack: bool) -> RowEval {
        let z3 = Vector3::zeros();
        let m3 = Matrix3::zeros();
        match *row {
            Row::Obstacle { k, center_now, center_next, d_safe, decay } => {
                let (h0, g0, hh0) = obstacle_terms(&it.states[k], &center_now, d_safe);
                let (h1, g1, hh1) = obstacle_terms(&it.states[k + 1], &center_next, d_safe);
                let c = 1.0 - decay;
                RowEval { k, value: h1 - c * h0, g_now: -g0 * c, g_next: g1, h_now: -hh0 * c, h_next: hh1, slack: false }
            }
            Row::View { k, target, cos_max, decay } => {
                let (h0, g0, hh0) = view_terms(&it.states[k], &target, cos_max);
                let (h1, g1, hh1) = view_terms(&it.states[k + 1], &target, cos_max);
                let c = 1.0 - decay;
                let mut value = h1 - c * h0;
                if with_slack {
                    value -= it.slacks[k];
                }
                RowEval { k, value, g_now: -g0 * c, g_next: g1, h_now: -hh0 * c, h_next: hh1, slack: true }
            }
            Row::StateBound { k, axis, bound, upper } => {
                let x = it.states[k + 1][axis];
                let mut g = Vector3::zeros();
                let (value, sign) = if upper { (bound - x, -1.0) } else { (x - bound, 1.0) };
                g[axis] = sign;
                RowEval { k, value, g_now: z3, g_next: g, h_now: m3, h_next: m3, slack: false }
            }
        }
    }

    fn evaluate(&self, it: &Iterate) -> Eval {
        let rows = self.rows.iter().map(|r| self.eval_row(r, it, true)).collect();
        let defects = (0..self.horizon)
            .map(|k| self.dynamics.step(&it.states[k], &it.controls[k], self.dt) - it.states[k + 1])
            .collect();
        Eval { rows, defects, objective: self.objective(it) }
    }

    fn violation(ev: &Eval) -> f64 {
        ev.defects.iter().map(|e| e.abs().sum()).sum::<f64>() + ev.rows.iter().map(|r| (-r.value).max(0.0)).sum::<f64>()
    }

    fn primal(ev: &Eval) -> f64 {
        let d = ev.defects.iter().fold(0.0f64, |m, e| m.max(e.amax()));
        ev.rows.iter().fold(d, |m, r| m.max(-r.value))
    }

    /// Sum of `mu_j * dc_j/dx_k` per state.
    fn row_gradients(&self, ev: &Eval, mu: &[f64]) -> Vec<Vector3<f64>> {
        let mut gc = vec![Vector3::zeros(); self.horizon + 1];
        for (r, &m) in ev.rows.iter().zip(mu) {
            gc[r.k] += r.g_now * m;
            gc[r.k + 1] += r.g_next * m;
        }
        gc
    }

    /// Dynamics multipliers from stationarity in the free states.
    fn dynamics_multipliers(&self, it: &Iterate, ev: &Eval, mu: &[f64]) -> Vec<Vector3<f64>> {
        let n = self.horizon;
        let gc = self.row_gradients(ev, mu);
        let mut nu = vec![Vector3::zeros(); n];
        let grad = self.objective_gradient(it);
        nu[n - 1] = grad.states[n] - gc[n];
        for k in (1..n).rev() {
            let (a, _) = self.dynamics.jacobians(&it.states[k], &it.controls[k], self.dt);
            nu[k - 1] = a.transpose() * nu[k] - gc[k];
        }
        nu
    }

    /// Stationarity, complementarity and primal infeasibility.
    fn kkt(&self, it: &Iterate, ev: &Eval, mu: &[f64], nu: &[Vector3<f64>]) -> (f64, f64) {
        let mut stat = 0.0f64;
        let grad = self.objective_gradient(it);
        for k in 0..self.horizon {
            let u = &it.controls[k];
            let (_, b) = self.dynamics.jacobians(&it.states[k], u, self.dt);
            let r = grad.controls[k] + b.transpose() * nu[k];
            // Projected gradient, zero at a bound held by a multiplier of the right sign.
            for i in 0..2 {
                let proj = (u[i] - r[i]).clamp(self.u_lower[i], self.u_upper[i]);
                stat = stat.max((u[i] - proj).abs());
            }
        }
        if self.slack_weight.is_some() {
            let mut rd = grad.slacks.clone();
            for (r, &m) in ev.rows.iter().zip(mu) {
                if r.slack {
                    rd[r.k] += m;
                }
            }
            stat = rd.iter().fold(stat, |s, v| s.max(v.abs()));
        }
        let compl = ev.rows.iter().zip(mu).fold(0.0f64, |s, (r, &m)| s.max((m * r.value).abs()));
        let primal = Self::primal(ev).max(0.0);
        (stat.max(compl).max(primal), primal)
    }

    /// Rollout of the iterate's controls, if it satisfies every row.
    fn feasible_rollout(&self, it: &Iterate) -> Option<Iterate> {
        let controls: Vec<_> = it
            .controls
            .iter()
            .map(|u| Vector2::new(u.x.clamp(self.u_lower.x, self.u_upper.x), u.y.clamp(self.u_lower.y, self.u_upper.y)))
            .collect();
        let states = self.rollout(&controls);
        let mut out = Iterate { states, controls, slacks: it.slacks.clone() };
        self.fit_slacks(&mut out);
        let ok = self.rows.iter().all(|r| self.eval_row(r, &out, true).value >= -FEAS_TOL);
        ok.then_some(out)
    }

    fn stage_hessians(&self, it: &Iterate, ev: &Eval, mu: &[f64], nu: &[Vector3<f64>]) -> (Vec<Matrix5>, Matrix3<f64>) {
        let n = self.horizon;
        let mut hc = vec![Matrix3::zeros(); n + 1];
        for (r, &m) in ev.rows.iter().zip(mu) {
            hc[r.k] += r.h_now * m;
            hc[r.k + 1] += r.h_next * m;
        }
        let blocks = (0..n)
            .map(|k| {
                let mut h = self.dynamics.weighted_hessian(&it.states[k], &it.controls[k], self.dt, &nu[k]);
                let mut xx = h.fixed_view_mut::<3, 3>(0, 0);
                xx -= hc[k];
                let mut uu = h.fixed_view_mut::<2, 2>(3, 3);
                uu += self.control_weight;
                (h + h.transpose()) * 0.5
            })
            .collect();
        let t = self.terminal_weight - hc[n];
        (blocks, (t + t.transpose()) * 0.5)
    }
}

fn clip5(h: Matrix5) -> Matrix5 {
    let mut eig = SymmetricEigen::new(h);
    eig.eigenvalues.apply(|l| *l = l.max(EIG_FLOOR));
    eig.recompose()
}

fn clip3(h: Matrix3<f64>) -> Matrix3<f64> {
    let mut eig = SymmetricEigen::new(h);
    eig.eigenvalues.apply(|l| *l = l.max(EIG_FLOOR));
    eig.recompose()
}

/// Shifts the diagonal until the matrix is positive definite.
fn make_positive_definite(h: &mut DMatrix<f64>) {
    if h.clone().cholesky().is_some() {
        return;
    }
    let lmin = SymmetricEigen::new(h.clone()).eigenvalues.min();
    let scale = h.diagonal().amax().max(1.0);
    let shift = -lmin + EIG_FLOOR * scale;
    for i in 0..h.nrows() {
        h[(i, i)] += shift;
    }
}

struct Step {
    dx: Vec<Vector3<f64>>,
    du: Vec<Vector2<f64>>,
    dd: Vec<f64>,
    row_mult: Vec<f64>,
    /// Directional derivative of the objective.
    df: f64,
    /// Linearized row violation left by the QP.
    lin_viol: f64,
    nu_max: f64,
}

impl<D: Dynamics> NlpProblem<D> {
    fn qp_step(&self, it: &Iterate, ev: &Eval, mu: &[f64], nu: &[Vector3<f64>]) -> Step {
        let n = self.horizon;
        let nu_n = 2 * n;
        let n_slack = if self.slack_weight.is_some() { n } else { 0 };
        let nq = nu_n + n_slack;
        let (blocks, h_term) = self.stage_hessians(it, ev, mu, nu);
        let grad = self.objective_gradient(it);

        // Sensitivities dx_k = S_k du + s_k.
        let mut sens = Vec::with_capacity(n + 1);
        let mut offs = Vec::with_capacity(n + 1);
        let mut a_mats = Vec::with_capacity(n);
        sens.push(DMatrix::<f64>::zeros(3, nu_n));
        offs.push(Vector3::zeros());
        for k in 0..n {
            let (a, b) = self.dynamics.jacobians(&it.states[k], &it.controls[k], self.dt);
            let mut s_next = DMatrix::<f64>::zeros(3, nu_n);
            let cols = 2 * k;
            if cols > 0 {
                let prev = sens[k].columns(0, cols);
                s_next.columns_mut(0, cols).copy_from(&(a * prev));
            }
            s_next.columns_mut(cols, 2).copy_from(&b);
            sens.push(s_next);
            offs.push(a * offs[k] + ev.defects[k]);
            a_mats.push(a);
        }

        let assemble = |blocks: &[Matrix5], h_term: &Matrix3<f64>| {
            let mut hq = DMatrix::<f64>::zeros(nq, nq);
            let mut gq = DVector::<f64>::zeros(nq);
            for k in 0..n {
                let w = 2 * (k + 1);
                let mut t = DMatrix::<f64>::zeros(5, w);
                t.view_mut((0, 0), (3, w)).copy_from(&sens[k].columns(0, w));
                t[(3, 2 * k)] = 1.0;
                t[(4, 2 * k + 1)] = 1.0;
                let hk = DMatrix::from_fn(5, 5, |i, j| blocks[k][(i, j)]);
                let ht = &hk * &t;
                let mut view = hq.view_mut((0, 0), (w, w));
                view += t.transpose() * &ht;
                let mut zk = DVector::<f64>::zeros(5);
                zk.rows_mut(0, 3).copy_from(&offs[k]);
                let mut rhs = &hk * zk;
                rhs[3] += grad.controls[k].x;
                rhs[4] += grad.controls[k].y;
                let mut gv = gq.rows_mut(0, w);
                gv += t.transpose() * rhs;
            }
            let ht = DMatrix::from_fn(3, 3, |i, j| h_term[(i, j)]);
            let s_n = &sens[n];
            let mut view = hq.view_mut((0, 0), (nu_n, nu_n));
            view += s_n.transpose() * (&ht * s_n);
            let term_rhs = h_term * offs[n] + grad.states[n];
            let mut gv = gq.rows_mut(0, nu_n);
            gv += s_n.transpose() * DVector::from_column_slice(term_rhs.as_slice());
            if let Some(w) = self.slack_weight {
                for k in 0..n {
                    hq[(nu_n + k, nu_n + k)] = 2.0 * w;
                    gq[nu_n + k] = grad.slacks[k];
                }
            }
            (hq, gq)
        };

        // Exact reduced curvature when it is convex, otherwise clip the
        // negative eigenvalues of each stage block.
        let (mut blocks, mut h_term) = (blocks, h_term);
        let (mut hq, mut gq) = assemble(&blocks, &h_term);
        if hq.clone().cholesky().is_none() {
            blocks.iter_mut().for_each(|b| *b = clip5(*b));
            h_term = clip3(h_term);
            (hq, gq) = assemble(&blocks, &h_term);
            make_positive_definite(&mut hq);
        }

        let m = ev.rows.len();
        let mut amat = DMatrix::<f64>::zeros(m, nq);
        let mut bvec = DVector::<f64>::zeros(m);
        for (j, r) in ev.rows.iter().enumerate() {
            let row = sens[r.k].transpose() * DVector::from_column_slice(r.g_now.as_slice())
                + sens[r.k + 1].transpose() * DVector::from_column_slice(r.g_next.as_slice());
            amat.view_mut((j, 0), (1, nu_n)).copy_from(&row.transpose());
            if r.slack {
                amat[(j, nu_n + r.k)] = -1.0;
            }
            bvec[j] = r.value + r.g_now.dot(&offs[r.k]) + r.g_next.dot(&offs[r.k + 1]);
        }

        let mut lower = DVector::from_element(nq, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(nq, f64::INFINITY);
        for k in 0..n {
            for i in 0..2 {
                lower[2 * k + i] = self.u_lower[i] - it.controls[k][i];
                upper[2 * k + i] = self.u_upper[i] - it.controls[k][i];
            }
        }
        let qp = ElasticQp { h: hq, g: gq.clone(), a: amat, b: bvec, lower, upper, elastic_weight: ELASTIC_WEIGHT };
        let sol = qp.solve(&QpOptions::default());

        let dq = &sol.q;
        let du: Vec<Vector2<f64>> = (0..n).map(|k| Vector2::new(dq[2 * k], dq[2 * k + 1])).collect();
        let dd: Vec<f64> = (0..n_slack).map(|k| dq[nu_n + k]).collect();
        let du_flat = dq.rows(0, nu_n);
        let dx: Vec<Vector3<f64>> = (0..=n)
            .map(|k| {
                let v = &sens[k] * du_flat;
                Vector3::new(v[0], v[1], v[2]) + offs[k]
            })
            .collect();

        let mut df = grad.states[n].dot(&dx[n]);
        for k in 0..n {
            df += grad.controls[k].dot(&du[k]);
        }
        df += dd.iter().zip(&grad.slacks).map(|(d, g)| g * d).sum::<f64>();

        // QP estimate of the dynamics multipliers, for the merit penalty.
        let y: Vec<f64> = sol.row_mult.iter().copied().collect();
        let gc = self.row_gradients(ev, &y);
        let mut nu_qp = h_term * dx[n] + grad.states[n] - gc[n];
        let mut nu_max = nu_qp.amax();
        for k in (1..n).rev() {
            let mut z = nalgebra::SVector::<f64, 5>::zeros();
            z.fixed_rows_mut::<3>(0).copy_from(&dx[k]);
            z.fixed_rows_mut::<2>(3).copy_from(&du[k]);
            let hz = blocks[k] * z;
            nu_qp = a_mats[k].transpose() * nu_qp + hz.fixed_rows::<3>(0) - gc[k];
            nu_max = nu_max.max(nu_qp.amax());
        }

        Step {
            dx,
            du,
            dd,
            row_mult: y,
            df,
            lin_viol: sol.elastic.sum(),
            nu_max,
        }
    }
}

fn advance(it: &Iterate, step: &Step, alpha: f64) -> Iterate {
    let mut states = it.states.clone();
    for (k, s) in states.iter_mut().enumerate().skip(1) {
        *s += step.dx[k] * alpha;
    }
    let controls = it.controls.iter().zip(&step.du).map(|(u, d)| u + d * alpha).collect();
    let slacks = it.slacks.iter().zip(&step.dd).map(|(s, d)| s + d * alpha).collect();
    Iterate { states, controls, slacks }
}

/// Runs SQP from `init` and returns a dynamically consistent result.
pub fn solve_nlp<D: Dynamics>(nlp: &NlpProblem<D>, init: &Iterate, opts: &SolverOptions) -> NlpOutcome {
    let mut it = init.clone();
    let mut mu = vec![0.0; nlp.rows.len()];
    let mut ev = nlp.evaluate(&it);
    let mut nu = nlp.dynamics_multipliers(&it, &ev, &mu);
    let (mut kkt, mut primal) = nlp.kkt(&it, &ev, &mu, &nu);
    let mut best = nlp.feasible_rollout(&it);
    let mut rho = 10.0f64;
    let mut trace = Vec::new();
    let mut status = None;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        if kkt < opts.kkt_tol && primal < opts.primal_tol {
            status = Some(SolveStatus::Optimal);
            break;
        }
        let step = nlp.qp_step(&it, &ev, &mu, &nu);
        let y_max = step.row_mult.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rho = rho.max(1.5 * y_max.max(step.nu_max) + 1.0);
        let viol0 = NlpProblem::<D>::violation(&ev);
        let phi0 = ev.objective + rho * viol0;
        let dphi = step.df - rho * (viol0 - step.lin_viol);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = advance(&it, &step, alpha);
            let tev = nlp.evaluate(&trial);
            let phi = tev.objective + rho * NlpProblem::<D>::violation(&tev);
            if phi <= phi0 + 1e-4 * alpha * dphi.min(0.0) || dphi.abs() <= 1e-14 * (1.0 + phi0.abs()) {
                accepted = Some((trial, tev, phi));
                break;
            }
            alpha *= 0.5;
        }
        iterations = iter + 1;
        let Some((trial, tev, phi)) = accepted else { break };
        it = trial;
        ev = tev;
        mu = step.row_mult;
        nu = nlp.dynamics_multipliers(&it, &ev, &mu);
        (kkt, primal) = nlp.kkt(&it, &ev, &mu, &nu);
        if let Some(f) = nlp.feasible_rollout(&it) {
            best = Some(f);
        }
        trace.push(TraceEntry { iteration: iterations, objective: ev.objective, merit: phi, kkt, primal, step: alpha });
    }
    if status.is_none() && opts.max_iters > 0 && kkt < opts.kkt_tol && primal < opts.primal_tol {
        status = Some(SolveStatus::Optimal);
    }

    let (iterate, status) = match (status, best) {
        (Some(SolveStatus::Optimal), Some(_)) => {
            let r = nlp.feasible_rollout(&it).unwrap_or_else(|| nlp_rollout(nlp, &it));
            (r, SolveStatus::Optimal)
        }
        (_, Some(b)) => (b, SolveStatus::MaxIter),
        (_, None) => {
            let zero = nlp.initial_iterate(vec![Vector2::zeros(); nlp.horizon]);
            (zero, SolveStatus::Infeasible)
        }
    };
    let objective = nlp.objective(&iterate);
    NlpOutcome { iterate, status, iterations, objective, kkt, trace }
}

fn nlp_rollout<D: Dynamics>(nlp: &NlpProblem<D>, it: &Iterate) -> Iterate {
    let mut out = Iterate { states: nlp.rollout(&it.controls), controls: it.controls.clone(), slacks: it.slacks.clone() };
    nlp.fit_slacks(&mut out);
    out
}
