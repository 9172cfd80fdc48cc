//! Forward data generation for Cox-model survival data.
//!
//! Two routes produce the same law for continuous baselines: the usual
//! per-subject inverse-CDF draw ([`simulate_cox`]) and the sequential
//! mechanism that draws the next failure time from the pooled at-risk hazard
//! and then picks the failing subject by risk-set softmax ([`sequential_dga`]).
//! The sequential engine also handles baselines whose cumulative hazard jumps,
//! where tied failures are drawn from a Poisson count conditioned to be
//! positive and a no-repeat multinomial over the risk set.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{SubjectRecord, SurvivalDataset};
use crate::error::{FiduxError, Result};
use crate::moments::linear_predictor;
use crate::rng::open_unit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    /// `λ0(t) = rate`.
    Constant { rate: f64 },
    /// Cumulative hazard with jumps `(time, size)` plus an optional constant rate.
    Jumps {
        jumps: Vec<(f64, f64)>,
        #[serde(default)]
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Censoring {
    /// `C ~ Uniform(0, max)`.
    Uniform { max: f64 },
    /// Every subject censored at `time`.
    Horizon { time: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Independent Bernoulli(prob) coordinates.
    Bernoulli { prob: f64 },
    /// Independent standard normal coordinates.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub n: usize,
    pub beta: Vec<f64>,
    pub baseline: Baseline,
    pub censoring: Censoring,
    pub covariates: CovariateLaw,
}

impl SimulationDesign {
    /// Unit baseline, Uniform(0,2) censoring, Bernoulli(1/2) covariates.
    pub fn standard(n: usize, beta: Vec<f64>) -> Self {
        Self {
            n,
            beta,
            baseline: Baseline::Constant { rate: 1.0 },
            censoring: Censoring::Uniform { max: 2.0 },
            covariates: CovariateLaw::Bernoulli { prob: 0.5 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FiduxError::Config(m.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return bad("beta must be a nonempty finite vector");
        }
        match &self.baseline {
            Baseline::Constant { rate } if !(*rate > 0.0 && rate.is_finite()) => return bad("rate must be positive"),
            Baseline::Jumps { jumps, rate } => {
                if !(*rate >= 0.0 && rate.is_finite()) {
                    return bad("continuous rate must be nonnegative");
                }
                if jumps.iter().any(|(t, s)| !(*t > 0.0 && t.is_finite() && *s > 0.0 && s.is_finite())) {
                    return bad("jump times and sizes must be positive");
                }
                if jumps.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return bad("jump times must be strictly increasing");
                }
            }
            _ => {}
        }
        match self.censoring {
            Censoring::Uniform { max } if !(max > 0.0 && max.is_finite()) => return bad("c_max must be positive"),
            Censoring::Horizon { time } if !(time > 0.0 && time.is_finite()) => return bad("horizon must be positive"),
            _ => {}
        }
        if let CovariateLaw::Bernoulli { prob } = self.covariates {
            if !(prob > 0.0 && prob < 1.0) {
                return bad("Bernoulli probability must lie in (0,1)");
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }
}

pub fn draw_covariates<R: Rng + ?Sized>(design: &SimulationDesign, rng: &mut R) -> Vec<Vec<f64>> {
    let p = design.p();
    (0..design.n)
        .map(|_| {
            (0..p)
                .map(|_| match design.covariates {
                    CovariateLaw::Bernoulli { prob } => f64::from(u8::from(rng.random::<f64>() < prob)),
                    CovariateLaw::Normal => rng.sample(rand_distr::StandardNormal),
                })
                .collect()
        })
        .collect()
}

/// Potential censoring times; `inf` when there is no censoring.
pub fn draw_censoring<R: Rng + ?Sized>(design: &SimulationDesign, rng: &mut R) -> Vec<f64> {
    (0..design.n)
        .map(|_| match design.censoring {
            Censoring::Uniform { max } => max * open_unit(rng),
            Censoring::Horizon { time } => time,
            Censoring::None => f64::INFINITY,
        })
        .collect()
}

fn dataset_from(covariates: &[Vec<f64>], times: Vec<f64>, failed: Vec<bool>) -> Result<SurvivalDataset> {
    let mut records = Vec::with_capacity(times.len());
    for (i, (t, d)) in times.into_iter().zip(failed).enumerate() {
        if !t.is_finite() {
            return Err(FiduxError::Config(format!(
                "subject {i} is never observed; use finite censoring or a positive continuous rate"
            )));
        }
        records.push(SubjectRecord::new(covariates[i].clone(), t, d));
    }
    SurvivalDataset::new(records, None)
}

/// `T_i = −log W / (rate·exp(β·x_i))`, `Y = min(T, C)`, `Δ = 1{T ≤ C}`.
pub fn simulate_cox<R: Rng + ?Sized>(
    covariates: &[Vec<f64>],
    beta: &[f64],
    rate: f64,
    censoring: &[f64],
    rng: &mut R,
) -> Result<SurvivalDataset> {
    let mut times = Vec::with_capacity(covariates.len());
    let mut failed = Vec::with_capacity(covariates.len());
    for (x, &c) in covariates.iter().zip(censoring) {
        let hazard = rate * linear_predictor(beta, x).exp();
        let t = -open_unit(rng).ln() / hazard;
        times.push(t.min(c));
        failed.push(t <= c);
    }
    dataset_from(covariates, times, failed)
}

pub fn generate_standard<R: Rng + ?Sized>(design: &SimulationDesign, rng: &mut R) -> Result<SurvivalDataset> {
    design.validate()?;
    let rate = match design.baseline {
        Baseline::Constant { rate } => rate,
        Baseline::Jumps { .. } => {
            return Err(FiduxError::Config("the inverse-CDF generator needs a constant baseline".into()))
        }
    };
    let x = draw_covariates(design, rng);
    let c = draw_censoring(design, rng);
    simulate_cox(&x, &design.beta, rate, &c, rng)
}

/// One failure event of the sequential mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureEvent {
    pub time: f64,
    pub subjects: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DgaOutcome {
    pub dataset: SurvivalDataset,
    pub events: Vec<FailureEvent>,
}

/// Softmax draw of one subject from `set`.
fn pick_subject<R: Rng + ?Sized>(set: &[usize], weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = set.iter().map(|&j| weights[j]).sum();
    let mut u = rng.random::<f64>() * total;
    for &j in set {
        u -= weights[j];
        if u < 0.0 {
            return j;
        }
    }
    *set.last().expect("nonempty risk set")
}

/// Poisson(eta) conditioned on `1 ≤ m ≤ max`, by rejection.
pub fn truncated_poisson<R: Rng + ?Sized>(eta: f64, max: usize, rng: &mut R) -> usize {
    assert!(eta > 0.0 && max >= 1);
    let dist = Poisson::new(eta).expect("positive mean");
    for _ in 0..100_000 {
        let m = dist.sample(rng) as usize;
        if m >= 1 && m <= max {
            return m;
        }
    }
    // acceptance region of negligible mass: fall back to the exact inverse CDF
    let mut logp: Vec<f64> = (1..=max)
        .scan(0.0f64, |acc, m| {
            *acc += (eta).ln() - (m as f64).ln();
            Some(*acc)
        })
        .collect();
    let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logp.iter_mut().for_each(|l| *l = (*l - top).exp());
    let total: f64 = logp.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in logp.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i + 1;
        }
    }
    max
}

/// Multinomial(count, q) over `set`, conditioned on no category repeating.
///
/// The conditioned law puts mass `∝ Π_{i∈S} q_i` on each `count`-subset, so it
/// is sampled exactly with the elementary-symmetric-polynomial recursion.
pub fn distinct_multinomial<R: Rng + ?Sized>(set: &[usize], weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let n = set.len();
    assert!(count <= n);
    let total: f64 = set.iter().map(|&j| weights[j]).sum();
    let q: Vec<f64> = set.iter().map(|&j| weights[j] / total).collect();
    // e[i][r]: sum over r-subsets of set[i..] of the product of q
    let mut e = vec![vec![0.0; count + 1]; n + 1];
    e[n][0] = 1.0;
    for i in (0..n).rev() {
        e[i][0] = 1.0;
        for r in 1..=count {
            e[i][r] = e[i + 1][r] + q[i] * e[i + 1][r - 1];
        }
    }
    let mut chosen = Vec::with_capacity(count);
    let mut r = count;
    for i in 0..n {
        if r == 0 {
            break;
        }
        let take = q[i] * e[i + 1][r - 1] / e[i][r];
        if rng.random::<f64>() < take {
            chosen.push(set[i]);
            r -= 1;
        }
    }
    chosen
}

/// The sequential mechanism given covariates and potential censoring times.
pub fn sequential_dga<R: Rng + ?Sized>(
    covariates: &[Vec<f64>],
    beta: &[f64],
    baseline: &Baseline,
    censoring: &[f64],
    rng: &mut R,
) -> Result<DgaOutcome> {
    let n = covariates.len();
    let weights: Vec<f64> = covariates.iter().map(|x| linear_predictor(beta, x).exp()).collect();
    let (rate, jumps): (f64, &[(f64, f64)]) = match baseline {
        Baseline::Constant { rate } => (*rate, &[]),
        Baseline::Jumps { jumps, rate } => (*rate, jumps.as_slice()),
    };
    let mut alive = vec![true; n];
    let mut fail_time = vec![f64::INFINITY; n];
    let mut events = Vec::new();
    let mut now = 0.0f64;

    loop {
        // subjects still at risk just after `now`
        let at_risk_after = |t: f64, alive: &[bool]| -> Vec<usize> {
            (0..n).filter(|&i| alive[i] && censoring[i] > t).collect()
        };
        if at_risk_after(now, &alive).is_empty() {
            break;
        }
        let mut breaks: Vec<(f64, Option<f64>)> = (0..n)
            .filter(|&i| alive[i] && censoring[i] > now && censoring[i].is_finite())
            .map(|i| (censoring[i], None))
            .collect();
        breaks.extend(jumps.iter().filter(|(t, _)| *t > now).map(|&(t, s)| (t, Some(s))));
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut clock = -open_unit(rng).ln();
        let mut seg_start = now;
        let mut event: Option<FailureEvent> = None;
        for &(b, jump) in breaks.iter().chain(std::iter::once(&(f64::INFINITY, None))) {
            let set = at_risk_after(seg_start, &alive);
            if set.is_empty() {
                break;
            }
            let hazard = rate * set.iter().map(|&j| weights[j]).sum::<f64>();
            let mass = hazard * (b - seg_start);
            if hazard > 0.0 && clock <= mass {
                let t = seg_start + clock / hazard;
                event = Some(FailureEvent { time: t, subjects: vec![pick_subject(&set, &weights, rng)] });
                break;
            }
            if !b.is_finite() {
                break;
            }
            clock -= mass;
            seg_start = b;
            if let Some(size) = jump {
                let set: Vec<usize> = (0..n).filter(|&i| alive[i] && censoring[i] >= b).collect();
                if set.is_empty() {
                    continue;
                }
                let eta = size * set.iter().map(|&j| weights[j]).sum::<f64>();
                if rng.random::<f64>() < -(-eta).exp_m1() {
                    let count = truncated_poisson(eta, set.len(), rng);
                    let mut subjects = distinct_multinomial(&set, &weights, count, rng);
                    subjects.sort_unstable();
                    event = Some(FailureEvent { time: b, subjects });
                    break;
                }
            }
        }
        let Some(ev) = event else { break };
        for &i in &ev.subjects {
            alive[i] = false;
            fail_time[i] = ev.time;
        }
        now = ev.time;
        events.push(ev);
    }

    let failed: Vec<bool> = alive.iter().map(|a| !a).collect();
    let times: Vec<f64> = (0..n).map(|i| if failed[i] { fail_time[i] } else { censoring[i] }).collect();
    Ok(DgaOutcome { dataset: dataset_from(covariates, times, failed)?, events })
}

pub fn generate_sequential_dga<R: Rng + ?Sized>(
    design: &SimulationDesign,
    censoring_times: &[f64],
    rng: &mut R,
) -> Result<SurvivalDataset> {
    design.validate()?;
    if !matches!(design.baseline, Baseline::Constant { .. }) {
        return Err(FiduxError::Config("the sequential generator needs a constant baseline".into()));
    }
    if censoring_times.len() != design.n {
        return Err(FiduxError::DimensionMismatch { expected: design.n, found: censoring_times.len() });
    }
    let x = draw_covariates(design, rng);
    Ok(sequential_dga(&x, &design.beta, &design.baseline, censoring_times, rng)?.dataset)
}

pub fn generate_discrete_dga<R: Rng + ?Sized>(design: &SimulationDesign, rng: &mut R) -> Result<SurvivalDataset> {
    design.validate()?;
    if !matches!(design.baseline, Baseline::Jumps { .. }) {
        return Err(FiduxError::Config("the tied-time generator needs a jump baseline".into()));
    }
    let x = draw_covariates(design, rng);
    let c = draw_censoring(design, rng);
    Ok(sequential_dga(&x, &design.beta, &design.baseline, &c, rng)?.dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn one_subject_reduces_to_exponential() {
        let mut rng = substream(1, 0);
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let out = sequential_dga(&[vec![0.0]], &[0.7], &Baseline::Constant { rate: 1.0 }, &[f64::INFINITY], &mut rng)
                .unwrap();
            assert_eq!(out.events.len(), 1);
            assert!(out.dataset.records()[0].failed);
            sum += out.events[0].time;
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.03);
    }

    #[test]
    fn censoring_stops_the_sequence() {
        let mut rng = substream(2, 0);
        let out = sequential_dga(
            &[vec![0.0], vec![1.0]],
            &[0.0],
            &Baseline::Constant { rate: 1e-9 },
            &[0.5, 0.8],
            &mut rng,
        )
        .unwrap();
        assert!(out.events.is_empty());
        let recs = out.dataset.records();
        assert_eq!((recs[0].time, recs[0].failed), (0.5, false));
        assert_eq!((recs[1].time, recs[1].failed), (0.8, false));
    }

    #[test]
    fn every_subject_fails_once_without_censoring() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3]).collect();
        let out = sequential_dga(&x, &[0.5], &Baseline::Constant { rate: 2.0 }, &[f64::INFINITY; 6], &mut substream(3, 0))
            .unwrap();
        assert_eq!(out.events.len(), 6);
        assert!(out.events.windows(2).all(|w| w[0].time < w[1].time));
        assert_eq!(out.dataset.m(), 6);
    }

    #[test]
    fn distinct_multinomial_matches_rejection() {
        let set = [0usize, 1, 2, 3];
        let w = [0.1, 0.2, 0.3, 0.4];
        let mut rng = substream(4, 0);
        let reps = 60_000;
        let mut exact = std::collections::HashMap::new();
        let mut rejected = std::collections::HashMap::new();
        for _ in 0..reps {
            *exact.entry(distinct_multinomial(&set, &w, 2, &mut rng)).or_insert(0u32) += 1;
            let pair = loop {
                let a = pick_subject(&set, &w, &mut rng);
                let b = pick_subject(&set, &w, &mut rng);
                if a != b {
                    break if a < b { vec![a, b] } else { vec![b, a] };
                }
            };
            *rejected.entry(pair).or_insert(0u32) += 1;
        }
        for (k, v) in &exact {
            let r = *rejected.get(k).unwrap_or(&0) as f64 / reps as f64;
            assert!((*v as f64 / reps as f64 - r).abs() < 0.01, "{k:?}");
        }
    }

    #[test]
    fn truncated_poisson_respects_bounds() {
        let mut rng = substream(5, 0);
        for _ in 0..1000 {
            let m = truncated_poisson(3.0, 2, &mut rng);
            assert!((1..=2).contains(&m));
        }
        assert_eq!(truncated_poisson(0.5, 1, &mut rng), 1);
        // extreme mean with tiny support uses the exact fallback
        assert_eq!(truncated_poisson(500.0, 1, &mut rng), 1);
    }

    #[test]
    fn single_at_risk_subject_fails_alone_at_jump() {
        let baseline = Baseline::Jumps { jumps: vec![(1.0, 0.4)], rate: 0.0 };
        let mut rng = substream(6, 0);
        for _ in 0..200 {
            let out = sequential_dga(&[vec![0.2]], &[1.0], &baseline, &[2.0], &mut rng).unwrap();
            for ev in &out.events {
                assert_eq!(ev.subjects.len(), 1);
                assert_eq!(ev.time, 1.0);
            }
        }
    }

    #[test]
    fn generators_reject_wrong_baselines() {
        let mut d = SimulationDesign::standard(5, vec![0.1]);
        d.baseline = Baseline::Jumps { jumps: vec![(1.0, 0.1)], rate: 0.0 };
        assert!(generate_standard(&d, &mut substream(1, 0)).is_err());
        let d = SimulationDesign::standard(5, vec![0.1]);
        assert!(generate_discrete_dga(&d, &mut substream(1, 0)).is_err());
        let mut bad = SimulationDesign::standard(5, vec![0.1]);
        bad.covariates = CovariateLaw::Bernoulli { prob: 1.5 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn standard_generator_is_reproducible() {
        let d = SimulationDesign::standard(20, vec![0.5, 1.0]);
        let a = generate_standard(&d, &mut substream(8, 3)).unwrap();
        let b = generate_standard(&d, &mut substream(8, 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.p(), 2);
    }
}
