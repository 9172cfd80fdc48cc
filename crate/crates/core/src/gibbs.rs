//! Fiducial Gibbs sampler for the log hazard ratio.
//!
//! One sweep visits k = 1..m in order: the upper bound `q_k*` of the k-th
//! uniform given the others is found by [`solve_qk_star`], then `U_k` is
//! redrawn on `(0, q_k*)`. After the sweep a representative β is selected from
//! the feasible set by maximizing `β·w` for a standard normal `w`.
//!
//! Uniforms are held on the log scale. Optimization runs on standardized
//! covariates; draws are reported on the original scale.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::{RiskStructure, Standardization};
use crate::error::{FiduxError, Result};
use crate::partial_likelihood::{newton_mle, ridge_maximizer, MleResult, NewtonOptions};
use crate::rng::{open_unit, substream};
use crate::solver::{
    check_feasible, log_shares, solve_qk_star, solve_representative, FeasibilityProblem, SolveStatus,
    SolverOptions,
};
use crate::stats::{effective_sample_size, quantile_sorted, sorted_copy};

#[derive(Debug, Clone, Serialize)]
pub struct FiducialConfig {
    pub n_mcmc: usize,
    pub n_burn: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Box on ‖β‖∞ for standardized covariates.
    pub bound: f64,
    pub ridge_penalty: f64,
    #[serde(skip)]
    pub solver: SolverOptions,
    #[serde(skip)]
    pub newton: NewtonOptions,
}

impl Default for FiducialConfig {
    fn default() -> Self {
        Self {
            n_mcmc: 400,
            n_burn: 40,
            seed: 1,
            alpha: 0.05,
            bound: 30.0,
            ridge_penalty: 1e-2,
            solver: SolverOptions::default(),
            newton: NewtonOptions::default(),
        }
    }
}

impl FiducialConfig {
    pub fn with_chain(n_mcmc: usize, n_burn: usize, seed: u64) -> Self {
        Self { n_mcmc, n_burn, seed, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.n_mcmc == 0 {
            return Err(FiduxError::Config("n_mcmc must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(FiduxError::Config("alpha must lie in (0,1)".into()));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(FiduxError::Config("box bound must be positive".into()));
        }
        Ok(())
    }
}

/// Chain state: log-uniforms and the current representative (standardized scale).
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub log_u: Vec<f64>,
    pub beta: Vec<f64>,
}

impl GibbsState {
    pub fn u_star(&self) -> Vec<f64> {
        self.log_u.iter().map(|v| v.exp()).collect()
    }
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone)]
pub struct SweepInfo {
    /// `log q_k*` for k = 1..m.
    pub log_q_star: Vec<f64>,
    pub box_active: bool,
    pub max_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiducialSamples {
    /// Retained representatives on the original covariate scale, one row per sweep.
    pub draws: Vec<Vec<f64>>,
    pub ess: Vec<f64>,
    /// Whether each draw's representative program was stopped by the box.
    pub at_box: Vec<bool>,
    pub box_active_count: usize,
    /// Largest constraint violation over all stored representatives.
    pub max_violation: f64,
    /// Coefficients the chain was started from (original scale).
    pub initial_beta: Vec<f64>,
    pub initialized_from_mle: bool,
}

impl FiducialSamples {
    pub fn p(&self) -> usize {
        self.initial_beta.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    /// Draws whose representative is a finite maximizer, or every draw when
    /// none is.
    ///
    /// When the likelihood is monotone the feasible set is unbounded and any
    /// direction w pointing along it has no maximizer; the box only makes the
    /// program solvable, so those draws sit at an arbitrary distance.
    pub fn interior(&self) -> Vec<&[f64]> {
        let inner: Vec<&[f64]> =
            self.draws.iter().zip(&self.at_box).filter(|(_, b)| !**b).map(|(d, _)| d.as_slice()).collect();
        if inner.is_empty() {
            self.draws.iter().map(Vec::as_slice).collect()
        } else {
            inner
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiducialSummary {
    pub point_estimate: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

/// Median and equal-tailed empirical quantile interval per coordinate, over
/// the draws returned by [`FiducialSamples::interior`].
pub fn summarize(samples: &FiducialSamples, alpha: f64) -> Result<FiducialSummary> {
    if samples.draws.is_empty() {
        return Err(FiduxError::EmptyReport("no fiducial draws".into()));
    }
    let draws = samples.interior();
    let p = draws[0].len();
    let mut out = FiducialSummary { point_estimate: vec![], ci_lower: vec![], ci_upper: vec![] };
    for j in 0..p {
        let col = sorted_copy(&draws.iter().map(|d| d[j]).collect::<Vec<_>>());
        out.point_estimate.push(quantile_sorted(&col, 0.5));
        out.ci_lower.push(quantile_sorted(&col, alpha / 2.0));
        out.ci_upper.push(quantile_sorted(&col, 1.0 - alpha / 2.0));
    }
    Ok(out)
}

pub struct FiducialSampler {
    risk: RiskStructure,
    standardization: Standardization,
    config: FiducialConfig,
}

impl FiducialSampler {
    pub fn new(risk: &RiskStructure, config: FiducialConfig) -> Result<Self> {
        config.validate()?;
        if risk.m() == 0 {
            return Err(FiduxError::NoFailures);
        }
        let standardization = risk.standardization();
        Ok(Self { risk: risk.standardized(&standardization), standardization, config })
    }

    /// The standardized risk structure the chain runs on.
    pub fn risk(&self) -> &RiskStructure {
        &self.risk
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn config(&self) -> &FiducialConfig {
        &self.config
    }

    /// Starting coefficients: the MLE when it converged, else the ridge maximizer.
    /// `mle` is on the original scale; `None` fits it here.
    fn initial_beta(&self, mle: Option<&MleResult>) -> Result<(Vec<f64>, bool)> {
        let fitted;
        let mle = match mle {
            Some(m) => Some(m),
            None => {
                fitted = newton_mle(&self.risk, &self.config.newton).ok().map(|mut m| {
                    m.beta_hat = self.standardization.to_original(&m.beta_hat);
                    m
                });
                fitted.as_ref()
            }
        };
        let (beta, from_mle) = match mle {
            Some(m) if m.converged => (self.standardization.to_standardized(&m.beta_hat), true),
            _ => (ridge_maximizer(&self.risk, self.config.ridge_penalty)?, false),
        };
        let lim = 0.99 * self.config.bound;
        Ok((beta.into_iter().map(|b| b.clamp(-lim, lim)).collect(), from_mle))
    }

    /// Draws `U_k ~ Uniform(0, q_k(β̃))` at the starting coefficients.
    pub fn init_chain<R: Rng + ?Sized>(&self, mle: Option<&MleResult>, rng: &mut R) -> Result<GibbsState> {
        Ok(self.init_chain_with(mle, rng)?.0)
    }

    fn init_chain_with<R: Rng + ?Sized>(
        &self,
        mle: Option<&MleResult>,
        rng: &mut R,
    ) -> Result<(GibbsState, bool)> {
        let (beta, from_mle) = self.initial_beta(mle)?;
        let log_u = log_shares(&beta, &self.risk).into_iter().map(|q| q + open_unit(rng).ln()).collect();
        Ok((GibbsState { log_u, beta }, from_mle))
    }

    /// One full sweep; `state` must be feasible on entry and is feasible on exit.
    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut GibbsState, rng: &mut R, index: usize) -> Result<SweepInfo> {
        let opts = &self.config.solver;
        let m = self.risk.m();
        let mut problem = FeasibilityProblem::new(&self.risk, state.log_u.clone(), self.config.bound)?;
        let mut x = state.beta.clone();
        let mut log_q_star = Vec::with_capacity(m);
        for k in 0..m {
            let rep = solve_qk_star(&problem, k, Some(&x), opts).map_err(|e| self.fail(index, e, state))?;
            if rep.status == SolveStatus::Infeasible {
                return Err(self.fail_msg(index, format!("q_{k}* problem infeasible"), state));
            }
            let log_q = rep.objective.min(0.0);
            problem.set_log_u(k, log_q + open_unit(rng).ln());
            log_q_star.push(log_q);
            x = rep.argmax;
        }
        let w: Vec<f64> = (0..self.risk.p())
            .map(|j| rng.sample::<f64, _>(StandardNormal) / self.standardization.scale[j])
            .collect();
        let rep = solve_representative(&problem, &w, Some(&x), opts).map_err(|e| self.fail(index, e, state))?;
        if rep.status == SolveStatus::Infeasible {
            return Err(self.fail_msg(index, "representative problem infeasible".into(), state));
        }
        let feas = check_feasible(&rep.argmax, &problem, opts.feasibility_tol);
        state.log_u = problem.log_u().to_vec();
        state.beta = rep.argmax;
        Ok(SweepInfo {
            log_q_star,
            box_active: rep.status == SolveStatus::BoxActive,
            max_violation: feas.max_violation,
        })
    }

    fn fail(&self, sweep: usize, e: FiduxError, state: &GibbsState) -> FiduxError {
        match e {
            FiduxError::Solver { message, .. } => self.fail_msg(sweep, message, state),
            other => other,
        }
    }

    fn fail_msg(&self, sweep: usize, message: String, state: &GibbsState) -> FiduxError {
        FiduxError::Solver { sweep, message, state: format!("log_u={:?} beta={:?}", state.log_u, state.beta) }
    }

    /// Runs `n_burn + n_mcmc` sweeps on `rng`, keeping the last `n_mcmc`.
    pub fn run_with<R: Rng + ?Sized>(&self, mle: Option<&MleResult>, rng: &mut R) -> Result<FiducialSamples> {
        let (mut state, from_mle) = self.init_chain_with(mle, rng)?;
        let initial_beta = self.standardization.to_original(&state.beta);
        let total = self.config.n_burn + self.config.n_mcmc;
        let mut draws = Vec::with_capacity(self.config.n_mcmc);
        let mut at_box = Vec::with_capacity(self.config.n_mcmc);
        let mut max_violation: f64 = 0.0;
        for j in 0..total {
            let info = self.sweep(&mut state, rng, j + 1)?;
            if j >= self.config.n_burn {
                draws.push(self.standardization.to_original(&state.beta));
                at_box.push(info.box_active);
                max_violation = max_violation.max(info.max_violation);
            }
        }
        let p = self.risk.p();
        let ess = (0..p)
            .map(|a| effective_sample_size(&draws.iter().map(|d: &Vec<f64>| d[a]).collect::<Vec<_>>()))
            .collect();
        Ok(FiducialSamples {
            draws,
            ess,
            box_active_count: at_box.iter().filter(|b| **b).count(),
            at_box,
            max_violation,
            initial_beta,
            initialized_from_mle: from_mle,
        })
    }

    /// Runs the chain on substream 0 of the configured seed.
    pub fn run(&self, mle: Option<&MleResult>) -> Result<FiducialSamples> {
        let mut rng = substream(self.config.seed, 0);
        self.run_with(mle, &mut rng)
    }
}

/// Convenience wrapper: build a sampler and run it from the configured seed.
pub fn run_gibbs(risk: &RiskStructure, config: &FiducialConfig) -> Result<FiducialSamples> {
    FiducialSampler::new(risk, config.clone())?.run(None)
}

/// One CSV row per retained sweep.
pub fn write_draws<W: Write>(samples: &FiducialSamples, names: &[String], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["sweep".to_string()];
    header.extend(names.iter().cloned());
    header.push("at_box".into());
    w.write_record(&header)?;
    for (i, (d, b)) in samples.draws.iter().zip(&samples.at_box).enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(d.iter().map(|v| v.to_string()));
        row.push(u8::from(*b).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
