//! Closed-form fiducial density for a single covariate.
//!
//! With p = 1 the representative selected by the chain has exactly one active
//! constraint almost surely, which yields the unnormalized density
//!
//! ```text
//! r(β) ∝ Π_j p_j(β) · Σ_{failures i} |J_i(β)| / (p_i(β) c_i)
//! ```
//!
//! where `p_i` is the risk-set softmax share of failure i, `J_i = dp_i/dβ`, and
//! `c_i = sup p_i − inf p_i`. Failures whose share is constant in β (for
//! instance a risk set of one) contribute nothing to the sum.
//!
//! The stationary law of the chain itself is the same expression without the
//! `1/c_i` weights: `U*` is uniform on the feasible region, the representative
//! is either endpoint of the interval `Q(U*)` with probability 1/2, and the
//! endpoint sits where one constraint is active. The two coincide only when
//! every `c_i` is equal, so both are exposed ([`Weighting`]).

use serde::Serialize;

use crate::data::RiskStructure;
use crate::error::{FiduxError, Result};
use crate::gibbs::{FiducialConfig, FiducialSampler};
use crate::stats::ks_one_sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Each Jacobian term divided by the range `c_i` of its share.
    Range,
    /// Plain sum of Jacobian terms: the law of the chain's endpoint draws.
    Unweighted,
}

pub struct FiducialDensity1d {
    /// Per failure: covariate of the failing subject and its risk-set covariates.
    terms: Vec<(f64, Vec<f64>)>,
    ranges: Vec<f64>,
    weighting: Weighting,
}

fn log_share(x: f64, set: &[f64], beta: f64) -> f64 {
    let mx = set.iter().map(|v| beta * v).fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + set.iter().map(|v| (beta * v - mx).exp()).sum::<f64>().ln();
    beta * x - lse
}

fn softmax_mean(set: &[f64], beta: f64) -> f64 {
    let mx = set.iter().map(|v| beta * v).fold(f64::NEG_INFINITY, f64::max);
    let (mut s0, mut s1) = (0.0, 0.0);
    for v in set {
        let w = (beta * v - mx).exp();
        s0 += w;
        s1 += w * v;
    }
    s1 / s0
}

/// `sup_β p − inf_β p` for a softmax share over the real line.
fn share_range(x: f64, set: &[f64], bound: f64) -> f64 {
    let max = set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = set.iter().copied().fold(f64::INFINITY, f64::min);
    if max == min {
        return 0.0;
    }
    let count = |v: f64| set.iter().filter(|&&s| s == v).count() as f64;
    let upper = if x == max { 1.0 / count(max) } else { 0.0 };
    let lower = if x == min { 1.0 / count(min) } else { 0.0 };
    // log p is concave in β, so golden-section finds the interior maximum
    let f = |b: f64| log_share(x, set, b);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-bound, bound);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let interior = f(0.5 * (a + b)).exp();
    interior.max(upper).max(lower) - upper.min(lower)
}

impl FiducialDensity1d {
    pub fn new(risk: &RiskStructure, bound: f64) -> Result<Self> {
        Self::with_weighting(risk, bound, Weighting::Range)
    }

    pub fn with_weighting(risk: &RiskStructure, bound: f64, weighting: Weighting) -> Result<Self> {
        if risk.p() != 1 {
            return Err(FiduxError::DimensionMismatch { expected: 1, found: risk.p() });
        }
        let mut terms = Vec::with_capacity(risk.m());
        let mut ranges = Vec::with_capacity(risk.m());
        for (h, &i) in risk.failing_order().iter().enumerate() {
            let set: Vec<f64> = risk.risk_set(risk.group_of(h)).iter().map(|&j| risk.covariate(j)[0]).collect();
            let x = risk.covariate(i)[0];
            ranges.push(share_range(x, &set, bound));
            terms.push((x, set));
        }
        if ranges.iter().all(|c| *c == 0.0) {
            return Err(FiduxError::DegenerateDensity(
                "every risk set has equal covariates; the Jacobian vanishes".into(),
            ));
        }
        Ok(Self { terms, ranges, weighting })
    }

    pub fn m(&self) -> usize {
        self.terms.len()
    }

    pub fn share(&self, h: usize, beta: f64) -> f64 {
        let (x, set) = &self.terms[h];
        log_share(*x, set, beta).exp()
    }

    /// `dp_h/dβ = p_h (x_h − E_β[x | R_h])`.
    pub fn jacobian(&self, h: usize, beta: f64) -> f64 {
        let (x, set) = &self.terms[h];
        self.share(h, beta) * (x - softmax_mean(set, beta))
    }

    pub fn share_range(&self, h: usize) -> f64 {
        self.ranges[h]
    }

    pub fn log_density(&self, beta: f64) -> f64 {
        let mut log_lik = 0.0;
        let mut jac = 0.0;
        for (h, (x, set)) in self.terms.iter().enumerate() {
            log_lik += log_share(*x, set, beta);
            if self.ranges[h] > 0.0 {
                let weight = match self.weighting {
                    Weighting::Range => self.ranges[h],
                    Weighting::Unweighted => 1.0,
                };
                jac += (x - softmax_mean(set, beta)).abs() / weight;
            }
        }
        log_lik + jac.ln()
    }

    /// Unnormalized density.
    pub fn density(&self, beta: f64) -> f64 {
        self.log_density(beta).exp()
    }
}

pub fn fiducial_density_1d(beta: f64, risk: &RiskStructure, bound: f64) -> Result<f64> {
    Ok(FiducialDensity1d::new(risk, bound)?.density(beta))
}

/// CDF tabulated on a uniform grid by the trapezoid rule.
#[derive(Debug, Clone)]
pub struct GridCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridCdf {
    pub fn from_density(density: &FiducialDensity1d, lo: f64, hi: f64, points: usize) -> Self {
        let step = (hi - lo) / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
        let logs: Vec<f64> = xs.iter().map(|&x| density.log_density(x)).collect();
        let top = logs.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let vals: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * step * (vals[i - 1] + vals[i]);
        }
        let total = cdf[points - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { xs, cdf }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        let n = self.xs.len();
        if x >= self.xs[n - 1] {
            return 1.0;
        }
        let i = self.xs.partition_point(|&g| g <= x) - 1;
        let f = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.cdf[i] + f * (self.cdf[i + 1] - self.cdf[i])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityCheck {
    /// Against the range-weighted density; this decides `passed`.
    pub ks_distance: f64,
    /// Against the unweighted endpoint density.
    pub ks_distance_unweighted: f64,
    pub threshold: f64,
    pub passed: bool,
    pub n_draws: usize,
    pub grid_points: usize,
    pub grid_lower: f64,
    pub grid_upper: f64,
}

/// Runs the chain and compares its draws with the normalized closed-form density.
///
/// The grid spans the chain's box translated to the original covariate scale.
pub fn density_check(
    risk: &RiskStructure,
    config: &FiducialConfig,
    threshold: f64,
    grid_points: usize,
) -> Result<DensityCheck> {
    if risk.p() != 1 {
        return Err(FiduxError::DimensionMismatch { expected: 1, found: risk.p() });
    }
    let sampler = FiducialSampler::new(risk, config.clone())?;
    let bound = config.bound / sampler.standardization().scale[0];
    let density = FiducialDensity1d::new(risk, bound)?;
    let unweighted = FiducialDensity1d::with_weighting(risk, bound, Weighting::Unweighted)?;
    let samples = sampler.run(None)?;
    let draws = samples.column(0);
    let ks_against = |d: &FiducialDensity1d| {
        let grid = GridCdf::from_density(d, -bound, bound, grid_points);
        ks_one_sample(&draws, |x| grid.eval(x))
    };
    let ks = ks_against(&density);
    Ok(DensityCheck {
        ks_distance: ks,
        ks_distance_unweighted: ks_against(&unweighted),
        threshold,
        passed: ks <= threshold,
        n_draws: draws.len(),
        grid_points,
        grid_lower: -bound,
        grid_upper: bound,
    })
}
