//! Batch front-end: builds systems, runs analysis pipelines and emits the
//! plot-ready CSV data behind the decay, disturbance, truncation and
//! Monte-Carlo studies.

pub mod pipelines;
pub mod registry;

use std::path::PathBuf;

/// Which analysis a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Riccati,
    Decay,
    Disturbance,
    TruncationSweep,
    LemmaSuite,
    Simulate,
}

impl std::str::FromStr for Pipeline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "riccati" => Ok(Pipeline::Riccati),
            "decay" => Ok(Pipeline::Decay),
            "disturbance" => Ok(Pipeline::Disturbance),
            "truncation-sweep" => Ok(Pipeline::TruncationSweep),
            "lemma-suite" => Ok(Pipeline::LemmaSuite),
            "simulate" => Ok(Pipeline::Simulate),
            other => Err(format!(
                "unknown pipeline '{other}' (expected riccati, decay, disturbance, \
                 truncation-sweep, lemma-suite or simulate)"
            )),
        }
    }
}

/// A fully specified experiment: system, pipeline, parameters, output
/// directory. Identical specs (including the seed) produce byte-identical
/// artifacts.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Builtin system name or path to a problem archive.
    pub system: String,
    pub pipeline: Pipeline,
    pub h: Option<usize>,
    pub kappa_min: Option<u32>,
    pub kappa_max: Option<u32>,
    pub rho: f64,
    pub eta: f64,
    pub alpha: Option<f64>,
    pub dt: Option<f64>,
    pub seed: u64,
    pub trials: usize,
    pub out: PathBuf,
}

impl ExperimentSpec {
    pub fn new(system: &str, pipeline: Pipeline, out: PathBuf) -> Self {
        ExperimentSpec {
            system: system.to_string(),
            pipeline,
            h: None,
            kappa_min: None,
            kappa_max: None,
            rho: 0.1,
            eta: 0.1,
            alpha: None,
            dt: None,
            seed: 0,
            trials: 8,
            out,
        }
    }
}

/// Failure modes of a run, mapped to process exit codes by the binary.
#[derive(Debug)]
pub enum RunError {
    /// Bad invocation (unknown system or pipeline, missing parameter): exit 2.
    Usage(String),
    /// A module operation failed: exit 1, reported with its error name.
    Pipeline(sedlqr::Error),
}

impl From<sedlqr::Error> for RunError {
    fn from(e: sedlqr::Error) -> Self {
        RunError::Pipeline(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Usage(msg) => write!(f, "usage-error: {msg}"),
            RunError::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

/// What a pipeline produced and whether every invariant check it ran passed.
#[derive(Debug)]
pub struct RunOutcome {
    pub checks_passed: bool,
    pub artifacts: Vec<PathBuf>,
    /// Human-readable summary lines (also printed by the binary).
    pub summary: Vec<String>,
}

/// Runs one experiment end to end.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome, RunError> {
    let system = registry::build_system(spec)?;
    std::fs::create_dir_all(&spec.out).map_err(|e| RunError::Pipeline(e.into()))?;
    match spec.pipeline {
        Pipeline::Riccati => pipelines::run_riccati(spec, &system),
        Pipeline::Decay => pipelines::run_decay(spec, &system),
        Pipeline::Disturbance => pipelines::run_disturbance(spec, &system),
        Pipeline::TruncationSweep => pipelines::run_truncation_sweep(spec, &system),
        Pipeline::LemmaSuite => pipelines::run_lemma_suite(spec, &system),
        Pipeline::Simulate => pipelines::run_simulate(spec, &system),
    }
}
