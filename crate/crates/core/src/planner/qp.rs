//! Dense convex QP with elastic (L1-penalized) general inequalities.
//!
//! ```text
//! min  1/2 q' H q + g' q + rho * sum(t)
//! s.t. A q + b + t >= 0,  t >= 0,  lower <= q <= upper
//! ```
//!
//! Solved with a Mehrotra predictor-corrector primal-dual interior point
//! method. The elastic variables keep every subproblem feasible; with `rho`
//! above the largest multiplier they are zero whenever the rows can be met.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct ElasticQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `-inf` entries mean unbounded.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub elastic_weight: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub q: DVector<f64>,
    /// Row multipliers, in `[0, elastic_weight]`.
    pub row_mult: DVector<f64>,
    /// Remaining linearized violation per row.
    pub elastic: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iters: 80,
            tol: 1e-11,
        }
    }
}

struct State {
    q: DVector<f64>,
    t: DVector<f64>,
    s: DVector<f64>,
    y: DVector<f64>,
    zt: DVector<f64>,
    sl: DVector<f64>,
    zl: DVector<f64>,
    su: DVector<f64>,
    zu: DVector<f64>,
}

struct Direction {
    q: DVector<f64>,
    t: DVector<f64>,
    s: DVector<f64>,
    y: DVector<f64>,
    zt: DVector<f64>,
    sl: DVector<f64>,
    zl: DVector<f64>,
    su: DVector<f64>,
    zu: DVector<f64>,
}

impl ElasticQp {
    pub fn solve(&self, opts: &QpOptions) -> QpSolution {
        let n = self.g.len();
        let m = self.b.len();
        let rho = self.elastic_weight;
        let lo_idx: Vec<usize> = (0..n).filter(|&i| self.lower[i].is_finite()).collect();
        let hi_idx: Vec<usize> = (0..n).filter(|&i| self.upper[i].is_finite()).collect();

        let mut q = DVector::zeros(n);
        for i in 0..n {
            let (l, u) = (self.lower[i], self.upper[i]);
            q[i] = match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l.max(0.0) + 1.0,
                (false, true) => u.min(0.0) - 1.0,
                (false, false) => 0.0,
            };
        }
        let r = -&self.b;
        let aq = &self.a * &q;
        let t = DVector::from_fn(m, |j, _| (r[j] - aq[j]).max(0.0) + 1.0);
        let s = &aq + &t - &r;
        let y0 = (0.5 * rho).min(1.0);
        let y = DVector::from_element(m, y0);
        let zt = DVector::from_element(m, rho - y0);
        let sl = DVector::from_fn(lo_idx.len(), |k, _| (q[lo_idx[k]] - self.lower[lo_idx[k]]).max(1e-2));
        let su = DVector::from_fn(hi_idx.len(), |k, _| (self.upper[hi_idx[k]] - q[hi_idx[k]]).max(1e-2));
        let zl = DVector::from_element(lo_idx.len(), 1.0);
        let zu = DVector::from_element(hi_idx.len(), 1.0);
        let mut st = State { q, t, s, y, zt, sl, zl, su, zu };

        let n_comp = (2 * m + lo_idx.len() + hi_idx.len()).max(1) as f64;
        let scale = 1.0 + self.g.amax().max(self.b.amax());
        let mut converged = false;
        let mut iters = 0;
        for it in 0..opts.max_iters {
            iters = it;
            // Residuals.
            let mut r_dq = &self.h * &st.q + &self.g - self.a.transpose() * &st.y;
            for (k, &i) in lo_idx.iter().enumerate() {
                r_dq[i] -= st.zl[k];
            }
            for (k, &i) in hi_idx.iter().enumerate() {
                r_dq[i] += st.zu[k];
            }
            let r_dt = DVector::from_fn(m, |j, _| rho - st.y[j] - st.zt[j]);
            let r_p = &self.a * &st.q + &st.t - &st.s - &r;
            let r_l = DVector::from_fn(lo_idx.len(), |k, _| st.q[lo_idx[k]] - self.lower[lo_idx[k]] - st.sl[k]);
            let r_u = DVector::from_fn(hi_idx.len(), |k, _| self.upper[hi_idx[k]] - st.q[hi_idx[k]] - st.su[k]);
            let mu = (st.s.dot(&st.y) + st.t.dot(&st.zt) + st.sl.dot(&st.zl) + st.su.dot(&st.zu)) / n_comp;
            let res = r_dq
                .amax()
                .max(r_dt.amax())
                .max(r_p.amax())
                .max(r_l.amax())
                .max(r_u.amax());
            if res <= opts.tol * scale && mu <= opts.tol {
                converged = true;
                break;
            }

            // Reduced normal matrix, shared by predictor and corrector.
            let w_inv = DVector::from_fn(m, |j, _| 1.0 / (st.s[j] / st.y[j] + st.t[j] / st.zt[j]));
            let mut nmat = self.h.clone();
            let mut aw = self.a.clone();
            for j in 0..m {
                aw.row_mut(j).scale_mut(w_inv[j]);
            }
            nmat += self.a.transpose() * &aw;
            for (k, &i) in lo_idx.iter().enumerate() {
                nmat[(i, i)] += st.zl[k] / st.sl[k];
            }
            for (k, &i) in hi_idx.iter().enumerate() {
                nmat[(i, i)] += st.zu[k] / st.su[k];
            }
            for i in 0..n {
                nmat[(i, i)] += 1e-12;
            }
            let Some(chol) = nmat.cholesky() else { break };

            let solve_dir = |r_sy: &DVector<f64>, r_tz: &DVector<f64>, r_lz: &DVector<f64>, r_uz: &DVector<f64>| {
                // xi = -r_p - Y^-1 r_sy + Zt^-1 (r_tz + T r_dt)
                let xi = DVector::from_fn(m, |j, _| {
                    -r_p[j] - r_sy[j] / st.y[j] + (r_tz[j] + st.t[j] * r_dt[j]) / st.zt[j]
                });
                let mut rhs = -&r_dq + self.a.transpose() * xi.component_mul(&w_inv);
                for (k, &i) in lo_idx.iter().enumerate() {
                    rhs[i] += (-r_lz[k] - st.zl[k] * r_l[k]) / st.sl[k];
                }
                for (k, &i) in hi_idx.iter().enumerate() {
                    rhs[i] += (r_uz[k] + st.zu[k] * r_u[k]) / st.su[k];
                }
                let dq = chol.solve(&rhs);
                let adq = &self.a * &dq;
                let dy = DVector::from_fn(m, |j, _| w_inv[j] * (xi[j] - adq[j]));
                let ds = DVector::from_fn(m, |j, _| (-r_sy[j] - st.s[j] * dy[j]) / st.y[j]);
                let dzt = DVector::from_fn(m, |j, _| r_dt[j] - dy[j]);
                let dt = DVector::from_fn(m, |j, _| (-r_tz[j] - st.t[j] * dzt[j]) / st.zt[j]);
                let dsl = DVector::from_fn(lo_idx.len(), |k, _| dq[lo_idx[k]] + r_l[k]);
                let dzl = DVector::from_fn(lo_idx.len(), |k, _| (-r_lz[k] - st.zl[k] * dsl[k]) / st.sl[k]);
                let dsu = DVector::from_fn(hi_idx.len(), |k, _| -dq[hi_idx[k]] + r_u[k]);
                let dzu = DVector::from_fn(hi_idx.len(), |k, _| (-r_uz[k] - st.zu[k] * dsu[k]) / st.su[k]);
                Direction { q: dq, t: dt, s: ds, y: dy, zt: dzt, sl: dsl, zl: dzl, su: dsu, zu: dzu }
            };

            let aff = solve_dir(
                &st.s.component_mul(&st.y),
                &st.t.component_mul(&st.zt),
                &st.sl.component_mul(&st.zl),
                &st.su.component_mul(&st.zu),
            );
            let alpha_aff = max_step(&st, &aff, 1.0);
            let mu_aff = ((&st.s + &aff.s * alpha_aff).dot(&(&st.y + &aff.y * alpha_aff))
                + (&st.t + &aff.t * alpha_aff).dot(&(&st.zt + &aff.zt * alpha_aff))
                + (&st.sl + &aff.sl * alpha_aff).dot(&(&st.zl + &aff.zl * alpha_aff))
                + (&st.su + &aff.su * alpha_aff).dot(&(&st.zu + &aff.zu * alpha_aff)))
                / n_comp;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            let target = sigma * mu;
            let corr = |a: &DVector<f64>, b: &DVector<f64>, da: &DVector<f64>, db: &DVector<f64>, second: f64| {
                DVector::from_fn(a.len(), |j, _| a[j] * b[j] + second * da[j] * db[j] - target)
            };
            let direction = |second: f64| {
                solve_dir(
                    &corr(&st.s, &st.y, &aff.s, &aff.y, second),
                    &corr(&st.t, &st.zt, &aff.t, &aff.zt, second),
                    &corr(&st.sl, &st.zl, &aff.sl, &aff.zl, second),
                    &corr(&st.su, &st.zu, &aff.su, &aff.zu, second),
                )
            };
            // The second-order term can cycle on degenerate subproblems; fall
            // back to plain centering when it fails to reduce the gap.
            let mut dir = direction(1.0);
            let mut alpha = max_step(&st, &dir, 0.995);
            if gap_after(&st, &dir, alpha) >= mu * n_comp {
                dir = direction(0.0);
                alpha = max_step(&st, &dir, 0.995);
            }
            st.q += &dir.q * alpha;
            st.t += &dir.t * alpha;
            st.s += &dir.s * alpha;
            st.y += &dir.y * alpha;
            st.zt += &dir.zt * alpha;
            st.sl += &dir.sl * alpha;
            st.zl += &dir.zl * alpha;
            st.su += &dir.su * alpha;
            st.zu += &dir.zu * alpha;
        }

        let aq = &self.a * &st.q;
        let elastic = DVector::from_fn(m, |j, _| (-(aq[j] + self.b[j])).max(0.0));
        QpSolution {
            q: st.q,
            row_mult: st.y,
            elastic,
            iterations: iters,
            converged,
        }
    }
}

fn gap_after(st: &State, d: &Direction, alpha: f64) -> f64 {
    let g = |a: &DVector<f64>, da: &DVector<f64>, b: &DVector<f64>, db: &DVector<f64>| (a + da * alpha).dot(&(b + db * alpha));
    g(&st.s, &d.s, &st.y, &d.y) + g(&st.t, &d.t, &st.zt, &d.zt) + g(&st.sl, &d.sl, &st.zl, &d.zl) + g(&st.su, &d.su, &st.zu, &d.zu)
}

fn ratio(v: &DVector<f64>, dv: &DVector<f64>, cap: f64) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(cap, f64::min)
}

fn max_step(st: &State, d: &Direction, frac: f64) -> f64 {
    let full = [
        ratio(&st.t, &d.t, f64::INFINITY),
        ratio(&st.s, &d.s, f64::INFINITY),
        ratio(&st.y, &d.y, f64::INFINITY),
        ratio(&st.zt, &d.zt, f64::INFINITY),
        ratio(&st.sl, &d.sl, f64::INFINITY),
        ratio(&st.zl, &d.zl, f64::INFINITY),
        ratio(&st.su, &d.su, f64::INFINITY),
        ratio(&st.zu, &d.zu, f64::INFINITY),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    (frac * full).min(1.0)
}
