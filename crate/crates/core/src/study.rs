//! Replicated simulation studies comparing the fiducial interval with the
//! Wald interval around the partial-likelihood MLE.
//!
//! Each replication draws its own dataset and runs its own chain on an
//! independent RNG substream, so results do not depend on how replications
//! are scheduled across threads.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::build_risk_structure;
use crate::dga::{generate_standard, Baseline, Censoring, CovariateLaw, SimulationDesign};
use crate::error::{FiduxError, Result};
use crate::gibbs::{summarize, FiducialConfig, FiducialSampler};
use crate::partial_likelihood::fit_mle;
use crate::rng::{replication_stream, substream};

fn default_baseline() -> Baseline {
    Baseline::Constant { rate: 1.0 }
}

fn default_censoring() -> Censoring {
    Censoring::Uniform { max: 2.0 }
}

fn default_covariates() -> CovariateLaw {
    CovariateLaw::Bernoulli { prob: 0.5 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub beta: Vec<f64>,
    #[serde(default = "default_baseline")]
    pub baseline: Baseline,
    #[serde(default = "default_censoring")]
    pub censoring: Censoring,
    #[serde(default = "default_covariates")]
    pub covariates: CovariateLaw,
}

impl Scenario {
    pub fn design(&self) -> SimulationDesign {
        SimulationDesign {
            n: self.n,
            beta: self.beta.clone(),
            baseline: self.baseline.clone(),
            censoring: self.censoring.clone(),
            covariates: self.covariates.clone(),
        }
    }
}

/// Optional study settings carried by a scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySettings {
    pub reps: Option<usize>,
    pub n_mcmc: Option<usize>,
    pub n_burn: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub study: StudySettings,
    pub scenario: Vec<Scenario>,
}

impl ScenarioFile {
    /// TOML unless the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| FiduxError::Config(e.to_string()))?
        };
        if file.scenario.is_empty() {
            return Err(FiduxError::Config("scenario file lists no scenarios".into()));
        }
        for s in &file.scenario {
            s.design().validate().map_err(|e| FiduxError::Config(format!("scenario `{}`: {e}", s.name)))?;
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub reps: usize,
    pub n_mcmc: usize,
    pub n_burn: usize,
    pub seed: u64,
    /// Worker threads; results are identical for any value.
    #[serde(skip)]
    pub threads: usize,
    pub alpha: f64,
    pub bound: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let f = FiducialConfig::default();
        Self { reps: 200, n_mcmc: f.n_mcmc, n_burn: f.n_burn, seed: 1, threads: 1, alpha: f.alpha, bound: f.bound }
    }
}

impl StudyConfig {
    /// Fills unset fields from the file's `[study]` table.
    pub fn apply(&mut self, settings: &StudySettings) {
        self.reps = settings.reps.unwrap_or(self.reps);
        self.n_mcmc = settings.n_mcmc.unwrap_or(self.n_mcmc);
        self.n_burn = settings.n_burn.unwrap_or(self.n_burn);
        self.seed = settings.seed.unwrap_or(self.seed);
        self.alpha = settings.alpha.unwrap_or(self.alpha);
    }

    fn chain(&self, seed: u64) -> FiducialConfig {
        FiducialConfig { alpha: self.alpha, bound: self.bound, ..FiducialConfig::with_chain(self.n_mcmc, self.n_burn, seed) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Everything retained from one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub index: usize,
    pub failures: usize,
    pub mle_converged: bool,
    /// Estimate where Newton stopped; zero when the data were not identifiable.
    pub mle_estimate: Vec<f64>,
    pub mle_interval: Option<Interval>,
    pub fiducial: Option<Interval>,
    pub fiducial_error: Option<String>,
    pub box_active_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    /// Replications entering the aggregates.
    pub count: usize,
    pub mse: Vec<Option<f64>>,
    pub mean_ci_length: Vec<Option<f64>>,
    pub coverage: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub beta_true: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    pub fiducial: EstimatorSummary,
    /// Over replications where Newton converged.
    pub mle: EstimatorSummary,
    /// MSE over all replications, divergent estimates taken where Newton stopped.
    pub mle_mse_including_divergent: Vec<f64>,
    pub mle_non_converged: usize,
    pub fiducial_failures: usize,
    /// Divergent-MLE replications whose fiducial estimate and interval are finite.
    pub divergent_with_finite_fiducial: usize,
    pub replications: Vec<Replication>,
}

fn run_replication(scenario: &Scenario, index_s: usize, rep: usize, config: &StudyConfig) -> Result<Replication> {
    let mut rng = substream(config.seed, replication_stream(index_s, rep));
    let data = generate_standard(&scenario.design(), &mut rng)?;
    let risk = build_risk_structure(&data)?;
    let chain = config.chain(config.seed);
    let p = scenario.beta.len();
    let mle = fit_mle(&risk, &chain.newton).ok();
    let (mle_converged, mle_estimate, mle_interval) = match &mle {
        Some(m) => {
            let interval = m.wald_intervals(config.alpha).map(|ci| Interval {
                estimate: m.beta_hat.clone(),
                lower: ci.iter().map(|c| c.0).collect(),
                upper: ci.iter().map(|c| c.1).collect(),
            });
            (m.converged, m.beta_hat.clone(), if m.converged { interval } else { None })
        }
        None => (false, vec![0.0; p], None),
    };
    let fid = FiducialSampler::new(&risk, chain)
        .and_then(|s| s.run_with(mle.as_ref(), &mut rng))
        .and_then(|samples| Ok((summarize(&samples, config.alpha)?, samples.box_active_count)));
    let (fiducial, fiducial_error, box_active_count) = match fid {
        Ok((s, b)) => (Some(Interval { estimate: s.point_estimate, lower: s.ci_lower, upper: s.ci_upper }), None, b),
        Err(e) => (None, Some(e.to_string()), 0),
    };
    Ok(Replication {
        index: rep,
        failures: risk.m(),
        mle_converged,
        mle_estimate,
        mle_interval,
        fiducial,
        fiducial_error,
        box_active_count,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn aggregate(beta: &[f64], intervals: &[&Interval]) -> EstimatorSummary {
    let p = beta.len();
    let per = |f: &dyn Fn(&Interval, usize) -> f64| -> Vec<Option<f64>> {
        (0..p).map(|j| mean(intervals.iter().map(|iv| f(iv, j)))).collect()
    };
    EstimatorSummary {
        count: intervals.len(),
        mse: per(&|iv, j| (iv.estimate[j] - beta[j]).powi(2)),
        mean_ci_length: per(&|iv, j| iv.upper[j] - iv.lower[j]),
        coverage: per(&|iv, j| f64::from(u8::from(iv.lower[j] <= beta[j] && beta[j] <= iv.upper[j]))),
    }
}

fn is_finite(iv: &Interval) -> bool {
    iv.estimate.iter().chain(&iv.lower).chain(&iv.upper).all(|v| v.is_finite())
}

pub fn summarize_scenario(scenario: &Scenario, replications: Vec<Replication>) -> ScenarioSummary {
    let beta = &scenario.beta;
    let fid: Vec<&Interval> = replications.iter().filter_map(|r| r.fiducial.as_ref()).collect();
    let mle: Vec<&Interval> = replications.iter().filter_map(|r| r.mle_interval.as_ref()).collect();
    let including = (0..beta.len())
        .map(|j| {
            mean(replications.iter().map(|r| (r.mle_estimate[j] - beta[j]).powi(2))).unwrap_or(f64::NAN)
        })
        .collect();
    ScenarioSummary {
        name: scenario.name.clone(),
        beta_true: beta.clone(),
        n: scenario.n,
        reps: replications.len(),
        fiducial: aggregate(beta, &fid),
        mle: aggregate(beta, &mle),
        mle_mse_including_divergent: including,
        mle_non_converged: replications.iter().filter(|r| !r.mle_converged).count(),
        fiducial_failures: replications.iter().filter(|r| r.fiducial.is_none()).count(),
        divergent_with_finite_fiducial: replications
            .iter()
            .filter(|r| !r.mle_converged && r.fiducial.as_ref().is_some_and(is_finite))
            .count(),
        replications,
    }
}

/// Progress callback: `(scenario index, replications finished, replications total)`.
pub type Progress<'a> = &'a (dyn Fn(usize, usize, usize) + Sync);

pub fn run_simulation_study(
    scenarios: &[Scenario],
    config: &StudyConfig,
    progress: Option<Progress>,
) -> Result<Vec<ScenarioSummary>> {
    if config.reps == 0 {
        return Err(FiduxError::EmptyReport("a study needs at least one replication".into()));
    }
    if scenarios.is_empty() {
        return Err(FiduxError::EmptyReport("no scenarios".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| FiduxError::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(scenarios.len());
    for (s, scenario) in scenarios.iter().enumerate() {
        scenario.design().validate()?;
        let done = AtomicUsize::new(0);
        let reps: Vec<Replication> = pool.install(|| {
            (0..config.reps)
                .into_par_iter()
                .map(|r| {
                    let rep = run_replication(scenario, s, r, config);
                    let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                    if let Some(cb) = progress {
                        cb(s, finished, config.reps);
                    }
                    rep
                })
                .collect::<Result<_>>()
        })?;
        out.push(summarize_scenario(scenario, reps));
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn fmt_vec(v: &[Option<f64>], digits: usize) -> String {
    v.iter().map(|x| fmt_opt(*x, digits)).collect::<Vec<_>>().join(" / ")
}

/// Aligned text table: one row per scenario and estimator.
pub fn render_table(summaries: &[ScenarioSummary]) -> String {
    let mut rows = vec![[
        "scenario".to_string(),
        "beta".to_string(),
        "estimator".to_string(),
        "MSE".to_string(),
        "CI length".to_string(),
        "coverage".to_string(),
        "non-conv".to_string(),
    ]];
    for s in summaries {
        let beta = s.beta_true.iter().map(|b| format!("{b}")).collect::<Vec<_>>().join(", ");
        let mle_mse = if s.mle_non_converged > 0 {
            let all = s.mle_mse_including_divergent.iter().map(|v| Some(*v)).collect::<Vec<_>>();
            format!("{}*", fmt_vec(&all, 3))
        } else {
            fmt_vec(&s.mle.mse, 3)
        };
        rows.push([
            s.name.clone(),
            format!("({beta})"),
            "fiducial".into(),
            fmt_vec(&s.fiducial.mse, 3),
            fmt_vec(&s.fiducial.mean_ci_length, 2),
            fmt_vec(&s.fiducial.coverage, 3),
            s.fiducial_failures.to_string(),
        ]);
        rows.push([
            String::new(),
            String::new(),
            "MLE".into(),
            mle_mse,
            fmt_vec(&s.mle.mean_ci_length, 2),
            fmt_vec(&s.mle.coverage, 3),
            s.mle_non_converged.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..7).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut text = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
        if i == 0 {
            text.push_str(&"-".repeat(widths.iter().sum::<usize>() + 12));
            text.push('\n');
        }
    }
    if summaries.iter().any(|s| s.mle_non_converged > 0) {
        text.push_str("* MLE MSE includes non-converged replications at the point where Newton stopped\n");
    }
    text
}
