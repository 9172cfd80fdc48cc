//! Fiducial draws of the piecewise-constant baseline hazard given a β draw.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::data::RiskStructure;
use crate::error::Result;
use crate::moments::linear_predictor;
use crate::rng::open_unit;

/// A baseline hazard constant on `(t_{k−1}, t_k]`, with `t_0 = 0` and the last
/// rate extending past the final failure time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineHazardSample {
    /// Distinct failure times `t_1 < … < t_K`.
    pub knots: Vec<f64>,
    /// `K + 1` rates; the last applies beyond `t_K`.
    pub rates: Vec<f64>,
    /// `K + 1` exposures `l_k`.
    pub exposures: Vec<f64>,
    /// The uniforms `W_k` behind `λ_k = −log W_k / rate_k`.
    pub uniforms: Vec<f64>,
    /// Largest observed time; evaluations past it are extrapolation.
    pub max_observed_time: f64,
}

/// `l_k = Σ_i (t_k ∧ Y_i − t_{k−1} ∧ Y_i) exp(β·x_i)` for k = 1..K+1, with `t_{K+1} = ∞`.
pub fn compute_exposures(risk: &RiskStructure, beta: &[f64]) -> Vec<f64> {
    let knots = risk.failure_times();
    let mut l = vec![0.0; knots.len() + 1];
    for i in 0..risk.n() {
        let y = risk.time(i);
        let w = linear_predictor(beta, risk.covariate(i)).exp();
        let mut prev = 0.0f64;
        for (k, &t) in knots.iter().enumerate() {
            let cur = t.min(y);
            l[k] += (cur - prev.min(y)) * w;
            prev = t;
        }
        l[knots.len()] += (y - prev.min(y)) * w;
    }
    l
}

/// Rate of the exponential used past the last failure: `max(l_K, 2 l_{K+1})`.
pub fn tail_rate(exposures: &[f64]) -> f64 {
    let k = exposures.len() - 1;
    exposures[k - 1].max(2.0 * exposures[k])
}

pub fn sample_baseline<R: Rng + ?Sized>(risk: &RiskStructure, beta: &[f64], rng: &mut R) -> Result<BaselineHazardSample> {
    let exposures = compute_exposures(risk, beta);
    let k = exposures.len() - 1;
    let mut rates = Vec::with_capacity(k + 1);
    let mut uniforms = Vec::with_capacity(k + 1);
    for idx in 0..=k {
        let rate = if idx < k { exposures[idx] } else { tail_rate(&exposures) };
        let w = open_unit(rng);
        uniforms.push(w);
        rates.push(-w.ln() / rate);
    }
    let max_observed_time = (0..risk.n()).map(|i| risk.time(i)).fold(0.0, f64::max);
    Ok(BaselineHazardSample { knots: risk.failure_times().to_vec(), rates, exposures, uniforms, max_observed_time })
}

impl BaselineHazardSample {
    /// `Λ*(t) = ∫_0^t λ*(s) ds`.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        let mut total = 0.0;
        let mut prev = 0.0;
        for (k, &knot) in self.knots.iter().enumerate() {
            if t <= prev {
                return total;
            }
            total += self.rates[k] * (t.min(knot) - prev);
            prev = knot;
        }
        if t > prev {
            total += self.rates[self.knots.len()] * (t - prev);
        }
        total
    }

    pub fn hazard(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|&knot| knot < t);
        self.rates[k]
    }

    pub fn is_extrapolated(&self, t: f64) -> bool {
        t > self.max_observed_time
    }

    /// `(knot, rate)` rows; the final row is keyed by `inf`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["interval_end", "rate", "exposure"])?;
        for (k, rate) in self.rates.iter().enumerate() {
            let end = self.knots.get(k).copied().unwrap_or(f64::INFINITY);
            w.write_record([end.to_string(), rate.to_string(), self.exposures[k].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Breslow estimate `Σ_{t_k ≤ t} |d_k| / Σ_{j∈R_k} exp(β·x_j)`.
pub fn breslow_cumulative_hazard(risk: &RiskStructure, beta: &[f64], t: f64) -> f64 {
    let mut total = 0.0;
    for (k, &tk) in risk.failure_times().iter().enumerate() {
        if tk > t {
            break;
        }
        let den: f64 = risk.risk_set(k).iter().map(|&j| linear_predictor(beta, risk.covariate(j)).exp()).sum();
        total += risk.tie_groups()[k].len() as f64 / den;
    }
    total
}
