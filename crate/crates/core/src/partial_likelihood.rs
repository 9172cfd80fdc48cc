//! Cox log partial likelihood (Breslow ties), its derivatives, and the
//! maximum partial likelihood estimator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::data::RiskStructure;
use crate::error::{FiduxError, Result};
use crate::moments::{group_moments, linear_predictor, Order};

fn check_dim(beta: &[f64], risk: &RiskStructure) -> Result<()> {
    if beta.len() != risk.p() {
        return Err(FiduxError::DimensionMismatch { expected: risk.p(), found: beta.len() });
    }
    Ok(())
}

/// `Σ_k Σ_{i∈d_k} [β·x_i − log Σ_{j∈R_k} exp(β·x_j)]`.
pub fn log_partial_likelihood(beta: &[f64], risk: &RiskStructure) -> Result<f64> {
    check_dim(beta, risk)?;
    let mom = group_moments(risk, beta, Order::Value);
    Ok(risk
        .failing_order()
        .iter()
        .enumerate()
        .map(|(h, &i)| linear_predictor(beta, risk.covariate(i)) - mom.log_den[risk.group_of(h)])
        .sum())
}

pub fn gradient(beta: &[f64], risk: &RiskStructure) -> Result<Vec<f64>> {
    check_dim(beta, risk)?;
    let p = risk.p();
    let mom = group_moments(risk, beta, Order::Gradient);
    let mut g = vec![0.0; p];
    for (h, &i) in risk.failing_order().iter().enumerate() {
        let mean = mom.mean(risk.group_of(h));
        for (a, x) in risk.covariate(i).iter().enumerate() {
            g[a] += x - mean[a];
        }
    }
    Ok(g)
}

pub fn hessian(beta: &[f64], risk: &RiskStructure) -> Result<DMatrix<f64>> {
    check_dim(beta, risk)?;
    let p = risk.p();
    let mom = group_moments(risk, beta, Order::Hessian);
    let mut h = DMatrix::zeros(p, p);
    for c in 0..risk.m() {
        let cov = mom.cov(risk.group_of(c));
        for a in 0..p {
            for b in 0..p {
                h[(a, b)] -= cov[a * p + b];
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceReason {
    /// Log-PL still increasing when the iterate left the bound or the cap was hit.
    Monotone,
    /// Iteration cap reached without monotone behaviour.
    IterationCap,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub gtol: f64,
    /// A converged iterate must also have a Newton step below this (∞-norm).
    pub step_tol: f64,
    pub max_iter: usize,
    /// ‖β‖∞ beyond which the likelihood is declared monotone.
    pub divergence_bound: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { gtol: 1e-8, step_tol: 1e-6, max_iter: 100, divergence_bound: 30.0 }
    }
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub beta_hat: Vec<f64>,
    pub converged: bool,
    pub log_pl: f64,
    /// Inverse observed information; present only when converged.
    pub neg_hessian_inverse: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub divergence_reason: Option<DivergenceReason>,
}

impl MleResult {
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.neg_hessian_inverse
            .as_ref()
            .map(|c| (0..c.nrows()).map(|a| c[(a, a)].sqrt()).collect())
    }

    /// Wald interval `β̂ ± z_{1−α/2} se`.
    pub fn wald_intervals(&self, alpha: f64) -> Option<Vec<(f64, f64)>> {
        let z = crate::stats::normal_quantile(1.0 - alpha / 2.0);
        self.std_errors().map(|se| {
            self.beta_hat.iter().zip(se).map(|(b, s)| (b - z * s, b + z * s)).collect()
        })
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Damped Newton step `(−H)⁻¹ g`, or `None` when `−H` is not positive definite.
fn newton_direction(g: &[f64], h: &DMatrix<f64>) -> Option<Vec<f64>> {
    let neg = -h;
    let chol = neg.cholesky()?;
    let d = chol.solve(&DVector::from_column_slice(g));
    d.iter().all(|v| v.is_finite()).then(|| d.iter().copied().collect())
}

/// Whether the partial likelihood is constant along some direction.
///
/// The softmax weights are positive for every β, so the null space of the
/// Hessian does not depend on β and checking at the origin suffices.
pub fn is_identifiable(risk: &RiskStructure) -> bool {
    let h = match hessian(&vec![0.0; risk.p()], risk) {
        Ok(h) => h,
        Err(_) => return false,
    };
    let eig = SymmetricEigen::new(-h);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    max > 0.0 && min > 1e-10 * max.max(1.0)
}

/// Newton–Raphson from β = 0 on the covariates as given.
pub fn newton_mle(risk: &RiskStructure, opts: &NewtonOptions) -> Result<MleResult> {
    if risk.m() == 0 {
        return Err(FiduxError::NoFailures);
    }
    if !is_identifiable(risk) {
        return Err(FiduxError::NonIdentifiable);
    }
    let p = risk.p();
    let mut beta = vec![0.0; p];
    let mut ll = log_partial_likelihood(&beta, risk)?;
    let mut last_gain = 0.0;
    for iter in 1..=opts.max_iter {
        let g = gradient(&beta, risk)?;
        let h = hessian(&beta, risk)?;
        let dir = match newton_direction(&g, &h) {
            Some(d) => d,
            None => {
                return Ok(diverged(beta, ll, iter, DivergenceReason::Monotone));
            }
        };
        if max_abs(&g) <= opts.gtol && max_abs(&dir) <= opts.step_tol {
            let cov = (-h).try_inverse();
            return Ok(MleResult {
                beta_hat: beta,
                converged: cov.is_some(),
                log_pl: ll,
                divergence_reason: if cov.is_some() { None } else { Some(DivergenceReason::Monotone) },
                neg_hessian_inverse: cov,
                iterations: iter,
            });
        }
        // near the optimum the gain is below the rounding of ℓ, so the line
        // search cannot see it; a tiny full Newton step is taken as is
        if max_abs(&dir) <= opts.step_tol {
            beta = beta.iter().zip(&dir).map(|(b, d)| b + d).collect();
            ll = log_partial_likelihood(&beta, risk)?;
            last_gain = 0.0;
            continue;
        }
        let mut step = 1.0;
        let mut candidate;
        let mut cand_ll;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(&dir).map(|(b, d)| b + step * d).collect::<Vec<_>>();
            cand_ll = log_partial_likelihood(&candidate, risk)?;
            if cand_ll >= ll || halvings >= 60 {
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
        if cand_ll < ll {
            // no ascent possible in floating point; treat the current point as final
            return Ok(finish_stalled(beta, ll, g, h, iter, opts));
        }
        last_gain = cand_ll - ll;
        beta = candidate;
        ll = cand_ll;
        if max_abs(&beta) > opts.divergence_bound {
            return Ok(diverged(beta, ll, iter, DivergenceReason::Monotone));
        }
    }
    let reason = if last_gain > 0.0 { DivergenceReason::Monotone } else { DivergenceReason::IterationCap };
    Ok(diverged(beta, ll, opts.max_iter, reason))
}

fn diverged(beta: Vec<f64>, ll: f64, iterations: usize, reason: DivergenceReason) -> MleResult {
    MleResult {
        beta_hat: beta,
        converged: false,
        log_pl: ll,
        neg_hessian_inverse: None,
        iterations,
        divergence_reason: Some(reason),
    }
}

fn finish_stalled(
    beta: Vec<f64>,
    ll: f64,
    g: Vec<f64>,
    h: DMatrix<f64>,
    iter: usize,
    opts: &NewtonOptions,
) -> MleResult {
    if max_abs(&g) <= opts.gtol.sqrt() {
        if let Some(cov) = (-h).try_inverse() {
            return MleResult {
                beta_hat: beta,
                converged: true,
                log_pl: ll,
                neg_hessian_inverse: Some(cov),
                iterations: iter,
                divergence_reason: None,
            };
        }
    }
    diverged(beta, ll, iter, DivergenceReason::IterationCap)
}

/// MLE computed on standardized covariates and mapped back to the original scale.
///
/// The divergence bound applies on the standardized scale.
pub fn fit_mle(risk: &RiskStructure, opts: &NewtonOptions) -> Result<MleResult> {
    let s = risk.standardization();
    let std_risk = risk.standardized(&s);
    let mut res = newton_mle(&std_risk, opts)?;
    res.beta_hat = s.to_original(&res.beta_hat);
    if let Some(cov) = res.neg_hessian_inverse.as_mut() {
        let p = cov.nrows();
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] /= s.scale[a] * s.scale[b];
            }
        }
    }
    Ok(res)
}

/// Maximizer of `ℓ(β) − penalty·‖β‖²`, which exists for any data.
pub fn ridge_maximizer(risk: &RiskStructure, penalty: f64) -> Result<Vec<f64>> {
    let p = risk.p();
    let objective = |b: &[f64]| -> Result<f64> {
        Ok(log_partial_likelihood(b, risk)? - penalty * b.iter().map(|v| v * v).sum::<f64>())
    };
    let mut beta = vec![0.0; p];
    let mut val = objective(&beta)?;
    for _ in 0..200 {
        let mut g = gradient(&beta, risk)?;
        let mut h = hessian(&beta, risk)?;
        for a in 0..p {
            g[a] -= 2.0 * penalty * beta[a];
            h[(a, a)] -= 2.0 * penalty;
        }
        let dir = newton_direction(&g, &h).ok_or_else(|| FiduxError::Solver {
            sweep: 0,
            message: "ridge Hessian not negative definite".into(),
            state: format!("beta={beta:?}"),
        })?;
        if max_abs(&dir) <= 1e-12 * (1.0 + max_abs(&beta)) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + step * d).collect();
            let cv = objective(&cand)?;
            if cv >= val {
                beta = cand;
                val = cv;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(beta)
}
