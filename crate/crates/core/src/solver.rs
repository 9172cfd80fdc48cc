//! The two convex programs solved inside every Gibbs sweep.
//!
//! Both maximize a concave objective over
//!
//! ```text
//! Q(u) = { β : β·x_{i_h} − log Σ_{j∈R_h} exp(β·x_j) ≥ log u_h  for all h,  ‖β‖∞ ≤ B }
//! ```
//!
//! Each constraint is the exponential-cone system
//! `Σ_j t_{j,h} ≤ 1, (t_{j,h}, 1, β·x_j − s_h) ∈ K_exp, β·x_{i_h} − s_h ≥ log u_h`
//! with the auxiliary `t` and `s` eliminated, which leaves a smooth concave
//! log-sum-exp inequality in β alone. The problems are tiny (p of a few, m up to
//! a few hundred), so a path-following log-barrier method on this smooth form
//! is used directly: damped Newton on `−t·f(β) − Σ log slack`, with `t` grown by
//! a constant factor until the barrier duality gap `M/t` is below tolerance.
//!
//! Iterates stay strictly feasible, which is what keeps the Gibbs chain inside
//! `Q(u)` without any projection step.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::RiskStructure;
use crate::error::{FiduxError, Result};
use crate::moments::{group_moments_into, linear_predictor, GroupMoments, Order};

/// Constraint system `q_h(β) ≥ u_h` for one vector of log-uniforms.
#[derive(Debug, Clone)]
pub struct FeasibilityProblem<'a> {
    risk: &'a RiskStructure,
    log_u: Vec<f64>,
    bound: f64,
}

impl<'a> FeasibilityProblem<'a> {
    pub fn new(risk: &'a RiskStructure, log_u: Vec<f64>, bound: f64) -> Result<Self> {
        if log_u.len() != risk.m() {
            return Err(FiduxError::DimensionMismatch { expected: risk.m(), found: log_u.len() });
        }
        if log_u.iter().any(|v| !(*v <= 0.0) || v.is_nan()) {
            return Err(FiduxError::Config("log_u entries must be <= 0".into()));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(FiduxError::Config("box bound must be positive".into()));
        }
        Ok(Self { risk, log_u, bound })
    }

    pub fn risk(&self) -> &RiskStructure {
        self.risk
    }

    pub fn log_u(&self) -> &[f64] {
        &self.log_u
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn set_log_u(&mut self, h: usize, value: f64) {
        self.log_u[h] = value;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    /// Factor by which the barrier weight grows each outer iteration.
    pub barrier_factor: f64,
    pub kkt_tol: f64,
    /// Smallest slack accepted at a warm start before recentering.
    pub interior_margin: f64,
    pub max_newton: usize,
    pub max_outer: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            gap_tol: 1e-8,
            barrier_factor: 5.0,
            kkt_tol: 1e-6,
            interior_margin: 1e-9,
            max_newton: 80,
            max_outer: 80,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    BoxActive,
    Infeasible,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub argmax: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Certified bound on objective suboptimality (barrier gap plus Newton decrement).
    pub kkt_residual: f64,
    pub newton_iterations: usize,
}

/// Result of evaluating every constraint at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Largest amount by which any constraint (or the box) is violated; 0 when none is.
    pub max_violation: f64,
}

/// `log q_h(β) − log u_h` for every failure h.
pub fn constraint_slacks(beta: &[f64], problem: &FeasibilityProblem) -> Vec<f64> {
    let mut mom = GroupMoments::default();
    group_moments_into(problem.risk, beta, Order::Value, &mut mom);
    let risk = problem.risk;
    risk.failing_order()
        .iter()
        .enumerate()
        .map(|(h, &i)| linear_predictor(beta, risk.covariate(i)) - mom.log_den[risk.group_of(h)] - problem.log_u[h])
        .collect()
}

/// `log q_h(β)` for every failure h.
pub fn log_shares(beta: &[f64], risk: &RiskStructure) -> Vec<f64> {
    let mut mom = GroupMoments::default();
    group_moments_into(risk, beta, Order::Value, &mut mom);
    risk.failing_order()
        .iter()
        .enumerate()
        .map(|(h, &i)| linear_predictor(beta, risk.covariate(i)) - mom.log_den[risk.group_of(h)])
        .collect()
}

pub fn check_feasible(beta: &[f64], problem: &FeasibilityProblem, tol: f64) -> Feasibility {
    let mut worst = constraint_slacks(beta, problem).into_iter().fold(0.0f64, |w, s| w.max(-s));
    for b in beta {
        worst = worst.max(b.abs() - problem.bound);
    }
    Feasibility { feasible: worst <= tol, max_violation: worst.max(0.0) }
}

/// Maximizes `log q_k(β)` subject to the other m−1 constraints and the box.
///
/// `start` should be strictly feasible for those constraints; otherwise a
/// phase-one search is run first. The reported objective is `log q_k*`.
pub fn solve_qk_star(
    problem: &FeasibilityProblem,
    k: usize,
    start: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    if k >= problem.risk.m() {
        return Err(FiduxError::DimensionMismatch { expected: problem.risk.m(), found: k });
    }
    solve(problem, Some(k), Goal::Share(k), start, opts)
}

/// Maximizes `β·w` over the full feasible set.
pub fn solve_representative(
    problem: &FeasibilityProblem,
    w: &[f64],
    start: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    if w.len() != problem.risk.p() {
        return Err(FiduxError::DimensionMismatch { expected: problem.risk.p(), found: w.len() });
    }
    solve(problem, None, Goal::Linear(w), start, opts)
}

#[derive(Debug, Clone, Copy)]
enum Goal<'a> {
    Linear(&'a [f64]),
    Share(usize),
    /// Phase one: the extra coordinate ζ is minimized.
    Slack,
    /// Pure barrier, used to recenter a warm start.
    Center,
}

struct Program<'p, 'r> {
    problem: &'p FeasibilityProblem<'r>,
    excluded: Option<usize>,
    goal: Goal<'p>,
    mom: GroupMoments,
}

struct Derivatives {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl<'p, 'r> Program<'p, 'r> {
    fn new(problem: &'p FeasibilityProblem<'r>, excluded: Option<usize>, goal: Goal<'p>) -> Self {
        Self { problem, excluded, goal, mom: GroupMoments::default() }
    }

    fn p(&self) -> usize {
        self.problem.risk.p()
    }

    fn phase_one(&self) -> bool {
        matches!(self.goal, Goal::Slack)
    }

    fn dim(&self) -> usize {
        self.p() + usize::from(self.phase_one())
    }

    fn n_constraints(&self) -> usize {
        self.problem.risk.m() - usize::from(self.excluded.is_some())
    }

    /// Number of barrier terms; the duality gap at the central point is this over t.
    fn barrier_count(&self) -> f64 {
        (self.n_constraints() + 2 * self.p()) as f64
    }

    fn zeta(&self, x: &[f64]) -> f64 {
        if self.phase_one() {
            x[self.p()]
        } else {
            0.0
        }
    }

    fn share(&self, beta: &[f64], h: usize) -> f64 {
        let risk = self.problem.risk;
        linear_predictor(beta, risk.covariate(risk.failing_order()[h])) - self.mom.log_den[risk.group_of(h)]
    }

    /// Objective to maximize; requires moments at `x` already computed.
    fn objective(&self, x: &[f64]) -> f64 {
        let beta = &x[..self.p()];
        match self.goal {
            Goal::Linear(w) => linear_predictor(beta, w),
            Goal::Share(k) => self.share(beta, k),
            Goal::Slack => -x[self.p()],
            Goal::Center => 0.0,
        }
    }

    fn min_slack(&mut self, x: &[f64]) -> f64 {
        let beta = &x[..self.p()];
        group_moments_into(self.problem.risk, beta, Order::Value, &mut self.mom);
        let zeta = self.zeta(x);
        let mut min = f64::INFINITY;
        for h in 0..self.problem.risk.m() {
            if Some(h) == self.excluded {
                continue;
            }
            min = min.min(self.share(beta, h) - self.problem.log_u[h] + zeta);
        }
        for b in beta {
            min = min.min(self.problem.bound - b.abs());
        }
        min
    }

    /// Barrier value `−t f(x) − Σ log slack`, `None` outside the open feasible set.
    fn value(&mut self, x: &[f64], t: f64) -> Option<f64> {
        let p = self.p();
        let beta = &x[..p];
        group_moments_into(self.problem.risk, beta, Order::Value, &mut self.mom);
        let zeta = self.zeta(x);
        let mut v = -t * self.objective(x);
        for h in 0..self.problem.risk.m() {
            if Some(h) == self.excluded {
                continue;
            }
            let s = self.share(beta, h) - self.problem.log_u[h] + zeta;
            if !(s > 0.0) {
                return None;
            }
            v -= s.ln();
        }
        for b in beta {
            let (lo, hi) = (self.problem.bound + b, self.problem.bound - b);
            if !(lo > 0.0 && hi > 0.0) {
                return None;
            }
            v -= lo.ln() + hi.ln();
        }
        v.is_finite().then_some(v)
    }

    fn derivatives(&mut self, x: &[f64], t: f64) -> Option<Derivatives> {
        let p = self.p();
        let d = self.dim();
        let risk = self.problem.risk;
        let beta = &x[..p];
        group_moments_into(risk, beta, Order::Hessian, &mut self.mom);
        let zeta = self.zeta(x);
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        let mut value = -t * self.objective(x);

        match self.goal {
            Goal::Linear(w) => {
                for a in 0..p {
                    grad[a] -= t * w[a];
                }
            }
            Goal::Share(k) => {
                let g = risk.group_of(k);
                let xi = risk.covariate(risk.failing_order()[k]);
                let mean = self.mom.mean(g);
                let cov = self.mom.cov(g);
                for a in 0..p {
                    grad[a] -= t * (xi[a] - mean[a]);
                    for b in 0..p {
                        hess[(a, b)] += t * cov[a * p + b];
                    }
                }
            }
            Goal::Slack => grad[p] += t,
            Goal::Center => {}
        }

        let mut dg = vec![0.0; d];
        for h in 0..risk.m() {
            if Some(h) == self.excluded {
                continue;
            }
            let s = self.share(beta, h) - self.problem.log_u[h] + zeta;
            if !(s > 0.0) {
                return None;
            }
            value -= s.ln();
            let g = risk.group_of(h);
            let xi = risk.covariate(risk.failing_order()[h]);
            let mean = self.mom.mean(g);
            let cov = self.mom.cov(g);
            for a in 0..p {
                dg[a] = xi[a] - mean[a];
            }
            if self.phase_one() {
                dg[p] = 1.0;
            }
            let inv = 1.0 / s;
            let inv2 = inv * inv;
            for a in 0..d {
                grad[a] -= dg[a] * inv;
                for b in 0..d {
                    hess[(a, b)] += dg[a] * dg[b] * inv2;
                }
            }
            for a in 0..p {
                for b in 0..p {
                    hess[(a, b)] += cov[a * p + b] * inv;
                }
            }
        }
        for a in 0..p {
            let (lo, hi) = (self.problem.bound + beta[a], self.problem.bound - beta[a]);
            if !(lo > 0.0 && hi > 0.0) {
                return None;
            }
            value -= lo.ln() + hi.ln();
            grad[a] += 1.0 / hi - 1.0 / lo;
            hess[(a, a)] += 1.0 / (hi * hi) + 1.0 / (lo * lo);
        }
        value.is_finite().then_some(Derivatives { value, grad, hess })
    }
}

/// Solves `H d = −g`, regularizing when `H` is numerically indefinite.
fn newton_step(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = (0..hess.nrows()).fold(0.0f64, |m, i| m.max(hess[(i, i)].abs())).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(ch) = h.cholesky() {
            let d = -ch.solve(grad);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        ridge = if ridge == 0.0 { scale * 1e-14 } else { ridge * 100.0 };
    }
    None
}

/// Damped Newton centering at fixed `t`. Returns (iterations, final decrement²).
fn center(
    prog: &mut Program,
    x: &mut Vec<f64>,
    t: f64,
    opts: &SolverOptions,
    stop: &mut dyn FnMut(&[f64]) -> bool,
) -> (usize, f64) {
    let mut lambda2 = f64::INFINITY;
    for it in 0..opts.max_newton {
        let Some(der) = prog.derivatives(x, t) else {
            return (it, lambda2);
        };
        let Some(step) = newton_step(&der.hess, &der.grad) else {
            return (it, lambda2);
        };
        let slope = der.grad.dot(&step);
        lambda2 = -slope;
        if lambda2 / 2.0 <= 1e-10 {
            return (it, lambda2);
        }
        let mut s = 1.0;
        let mut accepted = false;
        let mut trial = x.clone();
        for _ in 0..60 {
            for (ti, (xi, di)) in trial.iter_mut().zip(x.iter().zip(step.iter())) {
                *ti = xi + s * di;
            }
            if let Some(v) = prog.value(&trial, t) {
                if v <= der.value + 0.25 * s * slope {
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            return (it + 1, lambda2);
        }
        std::mem::swap(x, &mut trial);
        if stop(x) {
            return (it + 1, 0.0);
        }
    }
    (opts.max_newton, lambda2)
}

struct PathResult {
    x: Vec<f64>,
    t: f64,
    lambda2: f64,
    newton: usize,
}

/// Path-following from a strictly feasible `x`.
fn follow_path(
    prog: &mut Program,
    mut x: Vec<f64>,
    opts: &SolverOptions,
    stop: &mut dyn FnMut(&[f64]) -> bool,
) -> Result<PathResult> {
    let count = prog.barrier_count();
    let mut t = 1.0;
    let mut newton = 0;
    for _ in 0..opts.max_outer {
        let (its, lambda2) = center(prog, &mut x, t, opts, stop);
        newton += its;
        if stop(&x) || count / t < opts.gap_tol {
            return Ok(PathResult { x, t, lambda2, newton });
        }
        t *= opts.barrier_factor;
    }
    Err(FiduxError::Solver {
        sweep: 0,
        message: "barrier method did not reach the duality-gap tolerance".into(),
        state: format!("x={x:?} t={t}"),
    })
}

/// Finds a strictly feasible point for the constraints of `excluded`'s program.
fn phase_one(
    problem: &FeasibilityProblem,
    excluded: Option<usize>,
    start: &[f64],
    opts: &SolverOptions,
) -> Result<(Option<Vec<f64>>, f64, usize)> {
    let p = problem.risk.p();
    let b = problem.bound;
    let mut x: Vec<f64> = start.iter().map(|v| v.clamp(-0.99 * b, 0.99 * b)).collect();
    let mut prog = Program::new(problem, excluded, Goal::Slack);
    x.push(0.0);
    let worst = prog.min_slack(&x);
    x[p] = (-worst).max(0.0) + 1.0;
    let target = 1e-3f64.min(0.5 * b);
    let mut stop = |x: &[f64]| x[x.len() - 1] < -target;
    let res = follow_path(&mut prog, x, opts, &mut stop)?;
    let zeta = res.x[p];
    let beta = res.x[..p].to_vec();
    if zeta < -1e-12 {
        Ok((Some(beta), zeta, res.newton))
    } else {
        Ok((None, zeta, res.newton))
    }
}

fn solve(
    problem: &FeasibilityProblem,
    excluded: Option<usize>,
    goal: Goal,
    start: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let p = problem.risk.p();
    let zero = vec![0.0; p];
    let start = start.unwrap_or(&zero);
    if start.len() != p {
        return Err(FiduxError::DimensionMismatch { expected: p, found: start.len() });
    }
    let mut newton = 0;
    let mut x = start.to_vec();
    let mut prog = Program::new(problem, excluded, goal);
    let slack = prog.min_slack(&x);
    if !(slack > 0.0) {
        let (found, zeta, its) = phase_one(problem, excluded, start, opts)?;
        newton += its;
        match found {
            Some(b) => x = b,
            None => {
                return Ok(SolveReport {
                    argmax: start.to_vec(),
                    objective: f64::NEG_INFINITY,
                    status: SolveStatus::Infeasible,
                    kkt_residual: zeta.max(0.0),
                    newton_iterations: newton,
                });
            }
        }
    } else if slack < opts.interior_margin {
        // pull a near-active warm start toward the analytic center
        let mut centering = Program::new(problem, excluded, Goal::Center);
        let margin = opts.interior_margin;
        let mut probe = Program::new(problem, excluded, Goal::Center);
        let mut stop = |x: &[f64]| probe.min_slack(x) >= margin;
        let (its, _) = center(&mut centering, &mut x, 0.0, opts, &mut stop);
        newton += its;
    }

    let mut never = |_: &[f64]| false;
    let res = follow_path(&mut prog, x, opts, &mut never)?;
    newton += res.newton;
    let x = res.x;
    prog.min_slack(&x);
    let objective = prog.objective(&x);
    let kkt = (prog.barrier_count() + res.lambda2.min(1e300)) / res.t;
    let box_tol = 1e-4 * problem.bound;
    let box_active = x.iter().any(|b| problem.bound - b.abs() < box_tol);
    let status = if box_active { SolveStatus::BoxActive } else { SolveStatus::Optimal };
    Ok(SolveReport { argmax: x, objective, status, kkt_residual: kkt, newton_iterations: newton })
}
