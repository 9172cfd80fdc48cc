//! Machine-readable reports (`fidux-report/1`) and the end-to-end fit pipeline.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::baseline::{sample_baseline, BaselineHazardSample};
use crate::data::{build_risk_structure, SurvivalDataset};
use crate::density::DensityCheck;
use crate::error::{FiduxError, Result};
use crate::gibbs::{summarize, FiducialConfig, FiducialSampler, FiducialSamples};
use crate::partial_likelihood::{fit_mle, DivergenceReason, MleResult};
use crate::rng::substream;
use crate::stats::{quantile_sorted, sorted_copy};
use crate::study::{ScenarioSummary, StudyConfig};

pub const SCHEMA: &str = "fidux-report/1";

#[derive(Debug, Clone, Serialize)]
pub struct DataInfo {
    pub source: Option<String>,
    pub n: usize,
    pub p: usize,
    pub failures: usize,
    pub distinct_failure_times: usize,
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MleInfo {
    pub converged: bool,
    pub diverged: bool,
    pub non_identifiable: bool,
    pub divergence_reason: Option<DivergenceReason>,
    pub iterations: usize,
    pub log_pl: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MleCoefficient {
    pub estimate: f64,
    pub std_error: f64,
    pub ci: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct FiducialCoefficient {
    pub estimate: f64,
    pub ci: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientRecord {
    pub name: String,
    /// `None` when Newton did not converge.
    pub mle: Option<MleCoefficient>,
    pub fiducial: FiducialCoefficient,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainDiagnostics {
    pub draws: usize,
    pub ess: Vec<f64>,
    pub box_active_count: usize,
    pub max_violation: f64,
    pub initialized_from_mle: bool,
}

/// Pointwise summaries of the sampled baseline hazards, one entry per interval.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub draws: usize,
    /// Right ends of the intervals; the last is unbounded (`null`).
    pub interval_end: Vec<Option<f64>>,
    pub rate_median: Vec<f64>,
    pub rate_lower: Vec<f64>,
    pub rate_upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub mle_seconds: f64,
    pub chain_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub schema: String,
    pub kind: String,
    pub data: DataInfo,
    pub config: FiducialConfig,
    pub seed: u64,
    pub mle: MleInfo,
    pub coefficients: Vec<CoefficientRecord>,
    pub chain: ChainDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub config: FiducialConfig,
    /// Number of fiducial β draws to pair with a baseline-hazard draw; 0 skips it.
    pub baseline_draws: usize,
    pub timing: bool,
    pub source: Option<String>,
}

pub struct FitOutput {
    pub report: FitReport,
    pub samples: FiducialSamples,
    pub baselines: Vec<BaselineHazardSample>,
}

fn mle_info(mle: &Result<MleResult>) -> MleInfo {
    match mle {
        Ok(m) => MleInfo {
            converged: m.converged,
            diverged: !m.converged,
            non_identifiable: false,
            divergence_reason: m.divergence_reason,
            iterations: m.iterations,
            log_pl: m.log_pl.is_finite().then_some(m.log_pl),
        },
        Err(_) => MleInfo {
            converged: false,
            diverged: false,
            non_identifiable: true,
            divergence_reason: None,
            iterations: 0,
            log_pl: None,
        },
    }
}

/// Baselines for `count` β draws spread evenly over the summarized draws.
fn baseline_draws(
    risk: &crate::data::RiskStructure,
    samples: &FiducialSamples,
    count: usize,
    seed: u64,
) -> Result<Vec<BaselineHazardSample>> {
    let mut rng = substream(seed, 1);
    let draws = samples.interior();
    let total = draws.len();
    (0..count)
        .map(|i| {
            let idx = (i * total / count).min(total - 1);
            sample_baseline(risk, draws[idx], &mut rng)
        })
        .collect()
}

fn summarize_baselines(baselines: &[BaselineHazardSample]) -> BaselineSummary {
    let knots = &baselines[0].knots;
    let intervals = knots.len() + 1;
    let mut summary = BaselineSummary {
        draws: baselines.len(),
        interval_end: (0..intervals).map(|k| knots.get(k).copied()).collect(),
        rate_median: Vec::with_capacity(intervals),
        rate_lower: Vec::with_capacity(intervals),
        rate_upper: Vec::with_capacity(intervals),
    };
    for k in 0..intervals {
        let col = sorted_copy(&baselines.iter().map(|b| b.rates[k]).collect::<Vec<_>>());
        summary.rate_median.push(quantile_sorted(&col, 0.5));
        summary.rate_lower.push(quantile_sorted(&col, 0.025));
        summary.rate_upper.push(quantile_sorted(&col, 0.975));
    }
    summary
}

/// MLE, fiducial chain, summaries and optional baseline draws for one dataset.
pub fn fit(dataset: &SurvivalDataset, options: &FitOptions) -> Result<FitOutput> {
    let start = Instant::now();
    let risk = build_risk_structure(dataset)?;
    let config = &options.config;
    let mle = fit_mle(&risk, &config.newton);
    let mle_seconds = start.elapsed().as_secs_f64();
    let sampler = FiducialSampler::new(&risk, config.clone())?;
    let samples = sampler.run(mle.as_ref().ok())?;
    let chain_seconds = start.elapsed().as_secs_f64() - mle_seconds;
    let summary = summarize(&samples, config.alpha)?;

    let se = mle.as_ref().ok().filter(|m| m.converged).and_then(|m| m.std_errors().zip(m.wald_intervals(config.alpha)));
    let coefficients = dataset
        .covariate_names()
        .iter()
        .enumerate()
        .map(|(j, name)| CoefficientRecord {
            name: name.clone(),
            mle: se.as_ref().map(|(se, ci)| MleCoefficient {
                estimate: mle.as_ref().map(|m| m.beta_hat[j]).unwrap_or(f64::NAN),
                std_error: se[j],
                ci: [ci[j].0, ci[j].1],
            }),
            fiducial: FiducialCoefficient {
                estimate: summary.point_estimate[j],
                ci: [summary.ci_lower[j], summary.ci_upper[j]],
            },
        })
        .collect();

    let baselines = if options.baseline_draws > 0 {
        baseline_draws(&risk, &samples, options.baseline_draws, config.seed)?
    } else {
        Vec::new()
    };

    let report = FitReport {
        schema: SCHEMA.into(),
        kind: "fit".into(),
        data: DataInfo {
            source: options.source.clone(),
            n: risk.n(),
            p: risk.p(),
            failures: risk.m(),
            distinct_failure_times: risk.n_groups(),
            covariates: dataset.covariate_names().to_vec(),
        },
        config: config.clone(),
        seed: config.seed,
        mle: mle_info(&mle),
        coefficients,
        chain: ChainDiagnostics {
            draws: samples.draws.len(),
            ess: samples.ess.clone(),
            box_active_count: samples.box_active_count,
            max_violation: samples.max_violation,
            initialized_from_mle: samples.initialized_from_mle,
        },
        baseline: (!baselines.is_empty()).then(|| summarize_baselines(&baselines)),
        timing: options.timing.then(|| Timing {
            mle_seconds,
            chain_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        }),
    };
    Ok(FitOutput { report, samples, baselines })
}

/// Long-format CSV of baseline draws: `draw, interval_end, rate, exposure`.
pub fn write_baseline_draws<W: Write>(baselines: &[BaselineHazardSample], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["draw", "interval_end", "rate", "exposure"])?;
    for (d, b) in baselines.iter().enumerate() {
        for (k, rate) in b.rates.iter().enumerate() {
            let end = b.knots.get(k).map_or_else(|| "inf".to_string(), |t| t.to_string());
            w.write_record([(d + 1).to_string(), end, rate.to_string(), b.exposures[k].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

pub fn render_fit_table(report: &FitReport) -> String {
    let mut rows = vec![["coef", "MLE", "SE", "Wald CI", "fiducial", "fiducial CI"].map(String::from)];
    for c in &report.coefficients {
        let (est, se, ci) = match &c.mle {
            Some(m) => (fmt(m.estimate), fmt(m.std_error), format!("[{}, {}]", fmt(m.ci[0]), fmt(m.ci[1]))),
            None => ("diverged".into(), "-".into(), "-".into()),
        };
        rows.push([
            c.name.clone(),
            est,
            se,
            ci,
            fmt(c.fiducial.estimate),
            format!("[{}, {}]", fmt(c.fiducial.ci[0]), fmt(c.fiducial.ci[1])),
        ]);
    }
    let widths: Vec<usize> = (0..6).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        out.push_str(&line.join("  "));
        out.push('\n');
    }
    out.push_str(&format!(
        "n={} failures={} draws={} ess={} box-active={}\n",
        report.data.n,
        report.data.failures,
        report.chain.draws,
        report.chain.ess.iter().map(|e| format!("{e:.0}")).collect::<Vec<_>>().join("/"),
        report.chain.box_active_count,
    ));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityReport {
    pub schema: String,
    pub kind: String,
    pub source: Option<String>,
    pub config: FiducialConfig,
    pub seed: u64,
    #[serde(flatten)]
    pub check: DensityCheck,
}

impl DensityReport {
    pub fn new(check: DensityCheck, config: FiducialConfig, source: Option<String>) -> Self {
        Self { schema: SCHEMA.into(), kind: "density_check".into(), source, seed: config.seed, config, check }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub schema: String,
    pub kind: String,
    pub source: Option<String>,
    pub config: StudyConfig,
    pub seed: u64,
    pub scenarios: Vec<ScenarioSummary>,
}

impl StudyReport {
    pub fn new(scenarios: Vec<ScenarioSummary>, config: StudyConfig, source: Option<String>) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(FiduxError::EmptyReport("no scenarios were run".into()));
        }
        Ok(Self { schema: SCHEMA.into(), kind: "simulation".into(), source, seed: config.seed, config, scenarios })
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(report: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}
