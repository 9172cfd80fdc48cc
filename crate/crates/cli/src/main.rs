//! `fidux`: fiducial Cox regression from the command line.
//!
//! Exit codes: 0 success, 1 density check above threshold, 2 input or
//! configuration error, 3 numerical failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fidux_core::density::density_check;
use fidux_core::dga::{generate_standard, sequential_dga, draw_censoring, draw_covariates};
use fidux_core::gibbs::write_draws;
use fidux_core::report::{
    fit, render_fit_table, to_json, write_baseline_draws, DensityReport, FitOptions, StudyReport,
};
use fidux_core::rng::substream;
use fidux_core::study::{render_table, run_simulation_study, ScenarioFile, StudyConfig};
use fidux_core::{build_risk_structure, load_dataset_path, CsvSchema, FiducialConfig, FiduxError};

#[derive(Parser)]
#[command(name = "fidux", version, about = "Generalized fiducial inference for the Cox proportional hazards model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a dataset: partial-likelihood MLE plus fiducial draws, JSON report on stdout
    Fit(FitArgs),
    /// Run a replicated simulation study from a scenario file
    Simulate(SimulateArgs),
    /// Compare chain draws against the closed-form density (single covariate only)
    DensityCheck(DensityArgs),
    /// Simulate one dataset from a scenario and write it as CSV
    Generate(GenerateArgs),
}

#[derive(Args)]
struct SchemaArgs {
    /// Column holding observed times
    #[arg(long, default_value = "time")]
    time_col: String,
    /// Column holding the failure indicator (1 failed, 0 censored)
    #[arg(long, default_value = "status")]
    status_col: String,
    /// Comma-separated covariate columns; defaults to every other column
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl SchemaArgs {
    fn schema(&self) -> Result<CsvSchema, FiduxError> {
        if !self.delimiter.is_ascii() {
            return Err(FiduxError::Config("delimiter must be a single ASCII character".into()));
        }
        Ok(CsvSchema {
            time: self.time_col.clone(),
            status: self.status_col.clone(),
            covariates: self.covariates.clone(),
            delimiter: self.delimiter as u8,
        })
    }
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long)]
    n_mcmc: Option<usize>,
    #[arg(long)]
    n_burn: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Two-sided interval level is 1 − alpha
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Box bound on |β_j| for standardized covariates
    #[arg(long = "box", default_value_t = 30.0)]
    bound: f64,
}

impl ChainArgs {
    fn config(&self, n_mcmc: usize, n_burn: usize) -> FiducialConfig {
        FiducialConfig {
            alpha: self.alpha,
            bound: self.bound,
            ..FiducialConfig::with_chain(self.n_mcmc.unwrap_or(n_mcmc), self.n_burn.unwrap_or(n_burn), self.seed)
        }
    }
}

#[derive(Args)]
struct FitArgs {
    csv: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    chain: ChainArgs,
    /// Pair this many fiducial β draws with a baseline-hazard draw
    #[arg(long, default_value_t = 0)]
    baseline_draws: usize,
    /// Write every retained β draw as CSV
    #[arg(long)]
    draws_out: Option<PathBuf>,
    /// Write the baseline-hazard draws as CSV
    #[arg(long)]
    baseline_out: Option<PathBuf>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print a coefficient table to stderr
    #[arg(long)]
    table: bool,
    /// Include wall-clock timings in the report (makes it non-reproducible)
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SimulateArgs {
    scenario: PathBuf,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    n_mcmc: Option<usize>,
    #[arg(long)]
    n_burn: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Directory for study.json and study.txt; without it JSON goes to stdout
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Suppress progress output
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct DensityArgs {
    csv: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    chain: ChainArgs,
    /// Largest acceptable Kolmogorov–Smirnov distance
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    #[arg(long, default_value_t = 2001)]
    grid_points: usize,
}

#[derive(Args)]
struct GenerateArgs {
    scenario: PathBuf,
    /// Scenario to use when the file lists several
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Use the sequential risk-set mechanism instead of per-subject inversion
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Error(FiduxError),
    CheckFailed,
}

impl From<FiduxError> for Failure {
    fn from(e: FiduxError) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, FiduxError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), FiduxError> {
    match out {
        Some(path) => {
            let mut f = create(path)?;
            f.write_all(text.as_bytes())?;
            f.flush()?;
        }
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let data = load_dataset_path(&args.csv, &args.schema.schema()?)?;
    let defaults = FiducialConfig::default();
    let options = FitOptions {
        config: args.chain.config(defaults.n_mcmc, defaults.n_burn),
        baseline_draws: args.baseline_draws.max(usize::from(args.baseline_out.is_some())),
        timing: args.timing,
        source: Some(args.csv.display().to_string()),
    };
    let out = fit(&data, &options)?;
    if let Some(path) = &args.draws_out {
        write_draws(&out.samples, data.covariate_names(), create(path)?)?;
    }
    if let Some(path) = &args.baseline_out {
        write_baseline_draws(&out.baselines, create(path)?)?;
    }
    if args.table {
        eprint!("{}", render_fit_table(&out.report));
    }
    emit(&to_json(&out.report)?, args.out.as_deref())?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let file = ScenarioFile::load(&args.scenario)?;
    let mut config = StudyConfig { threads: args.threads, ..StudyConfig::default() };
    config.apply(&file.study);
    config.reps = args.reps.unwrap_or(config.reps);
    config.n_mcmc = args.n_mcmc.unwrap_or(config.n_mcmc);
    config.n_burn = args.n_burn.unwrap_or(config.n_burn);
    config.seed = args.seed.unwrap_or(config.seed);
    config.alpha = args.alpha.unwrap_or(config.alpha);
    let names: Vec<&str> = file.scenario.iter().map(|s| s.name.as_str()).collect();
    let progress = |s: usize, done: usize, total: usize| {
        eprint!("\r{}: {done}/{total}", names[s]);
        if done == total {
            eprintln!();
        }
    };
    let summaries = run_simulation_study(&file.scenario, &config, (!args.quiet).then_some(&progress as _))?;
    let table = render_table(&summaries);
    let report = StudyReport::new(summaries, config, Some(args.scenario.display().to_string()))?;
    let json = to_json(&report)?;
    match &args.out_dir {
        Some(dir) => {
            emit(&json, Some(&dir.join("study.json")))?;
            emit(&table, Some(&dir.join("study.txt")))?;
            eprint!("{table}");
        }
        None => {
            emit(&json, None)?;
            eprint!("{table}");
        }
    }
    Ok(())
}

fn cmd_density_check(args: &DensityArgs) -> Result<(), Failure> {
    let data = load_dataset_path(&args.csv, &args.schema.schema()?)?;
    if data.p() != 1 {
        return Err(FiduxError::DimensionMismatch { expected: 1, found: data.p() }.into());
    }
    let risk = build_risk_structure(&data)?;
    let config = args.chain.config(2000, 200);
    let check = density_check(&risk, &config, args.threshold, args.grid_points)?;
    let passed = check.passed;
    eprintln!(
        "KS distance {:.4} (threshold {}); against the unweighted endpoint density {:.4}",
        check.ks_distance, check.threshold, check.ks_distance_unweighted
    );
    let report = DensityReport::new(check, config, Some(args.csv.display().to_string()));
    emit(&to_json(&report)?, None)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), Failure> {
    let file = ScenarioFile::load(&args.scenario)?;
    let scenario = match &args.name {
        Some(name) => file
            .scenario
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| FiduxError::Config(format!("no scenario named `{name}`")))?,
        None => &file.scenario[0],
    };
    let design = scenario.design();
    let mut rng = substream(args.seed, 0);
    let data = if args.sequential {
        design.validate()?;
        let x = draw_covariates(&design, &mut rng);
        let c = draw_censoring(&design, &mut rng);
        sequential_dga(&x, &design.beta, &design.baseline, &c, &mut rng)?.dataset
    } else {
        generate_standard(&design, &mut rng)?
    };
    let mut buf = Vec::new();
    fidux_core::data::write_dataset(&data, &mut buf)?;
    emit(std::str::from_utf8(&buf).expect("csv writer emits UTF-8"), args.out.as_deref())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::DensityCheck(a) => cmd_density_check(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::CheckFailed) => ExitCode::from(1),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            if let FiduxError::Solver { state, .. } = &e {
                eprintln!("chain state: {state}");
            }
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
