//! Generalized fiducial inference for the Cox proportional hazards model.
//!
//! The log hazard ratio β is sampled by a Gibbs chain over the uniforms that
//! drive the subject-selection step of the Cox data-generating mechanism.
//! Each conditional update is a small convex program with log-sum-exp
//! constraints, solved by the barrier method in [`solver`]. Around that core
//! sit the partial-likelihood MLE used for initialization and comparison, the
//! fiducial baseline-hazard sampler, forward data generators, and a
//! simulation-study harness.

pub mod baseline;
pub mod data;
pub mod density;
pub mod dga;
pub mod error;
pub mod gibbs;
pub mod moments;
pub mod partial_likelihood;
pub mod report;
pub mod rng;
pub mod solver;
pub mod stats;
pub mod study;

pub use data::{
    build_risk_structure, load_dataset, load_dataset_path, CsvSchema, RiskStructure, Standardization,
    SubjectRecord, SurvivalDataset,
};
pub use error::{FiduxError, Result};
pub use gibbs::{run_gibbs, summarize, FiducialConfig, FiducialSampler, FiducialSamples, FiducialSummary, GibbsState};
pub use partial_likelihood::{fit_mle, newton_mle, DivergenceReason, MleResult, NewtonOptions};
pub use solver::{FeasibilityProblem, SolveReport, SolveStatus, SolverOptions};
