use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use sedlqr_cli::{run, ExperimentSpec, Pipeline, RunError};

/// Networked-LQR analysis pipelines for spatially decaying systems.
#[derive(Parser, Debug)]
#[command(name = "sedlqr", version, about)]
struct Cli {
    /// Pipeline: riccati | decay | disturbance | truncation-sweep |
    /// lemma-suite | simulate.
    pipeline: String,

    /// Builtin system name (heat-cycle, heat-cycle-stable, counterexample,
    /// toy-rho, thermal-grid, swing-synthetic) or path to a problem archive.
    #[arg(long)]
    system: String,

    /// Disturbance-response horizon H.
    #[arg(long = "H")]
    h: Option<usize>,

    /// Smallest truncation radius of a sweep.
    #[arg(long)]
    kappa_min: Option<u32>,

    /// Largest truncation radius of a sweep.
    #[arg(long)]
    kappa_max: Option<u32>,

    /// Stability rate parameter of the stable builtin variants.
    #[arg(long, default_value_t = 0.1)]
    rho: f64,

    /// Diffusion rate of the heat-equation builtins.
    #[arg(long, default_value_t = 0.1)]
    eta: f64,

    /// State-cost weight (builtin-specific default when omitted).
    #[arg(long)]
    alpha: Option<f64>,

    /// Discretization step (builtin-specific default when omitted).
    #[arg(long)]
    dt: Option<f64>,

    /// Seed for all randomness in the run.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Monte-Carlo trials for the simulate pipeline.
    #[arg(long, default_value_t = 8)]
    trials: usize,

    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    // SEDLQR_THREADS caps internal parallelism; default 1 keeps runs
    // reproducible wall-clock-wise on small machines.
    if let Ok(threads) = std::env::var("SEDLQR_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    let pipeline: Pipeline = match cli.pipeline.parse() {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("usage-error: {msg}");
            return ExitCode::from(2);
        }
    };
    let spec = ExperimentSpec {
        system: cli.system,
        pipeline,
        h: cli.h,
        kappa_min: cli.kappa_min,
        kappa_max: cli.kappa_max,
        rho: cli.rho,
        eta: cli.eta,
        alpha: cli.alpha,
        dt: cli.dt,
        seed: cli.seed,
        trials: cli.trials,
        out: cli.out,
    };
    match run(&spec) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            if outcome.checks_passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("one or more invariant checks failed");
                ExitCode::from(1)
            }
        }
        Err(RunError::Usage(msg)) => {
            eprintln!("usage-error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Pipeline(e)) => {
            eprintln!("pipeline failed: {e}");
            ExitCode::from(1)
        }
    }
}
