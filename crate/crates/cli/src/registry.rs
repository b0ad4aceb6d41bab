//! Builtin system registry and archive loading.

use std::path::Path;

use sedlqr::archive;
use sedlqr::systems::{
    counterexample_system, heat_equation_stable_system, heat_equation_system,
    swing_dynamics_system, synthetic_bus_network, thermal_grid_system, ContinuousSystem,
    DiscretizedLqr, LqrProblem,
};

use crate::{ExperimentSpec, RunError};

pub const BUILTIN_NAMES: &[&str] = &[
    "heat-cycle",
    "heat-cycle-stable",
    "counterexample",
    "toy-rho",
    "thermal-grid",
    "swing-synthetic",
];

/// A built system; discretized ones keep their continuous origin so the
/// discretization decay check can run.
pub enum BuiltSystem {
    Discrete(LqrProblem),
    Discretized(DiscretizedLqr),
}

impl BuiltSystem {
    pub fn problem(&self) -> &LqrProblem {
        match self {
            BuiltSystem::Discrete(p) => p,
            BuiltSystem::Discretized(d) => &d.problem,
        }
    }

    pub fn continuous(&self) -> Option<(&ContinuousSystem, f64)> {
        match self {
            BuiltSystem::Discrete(_) => None,
            BuiltSystem::Discretized(d) => Some((&d.continuous, d.dt)),
        }
    }
}

/// Builds a builtin by name, or loads an archive when the system string is a
/// path.
pub fn build_system(spec: &ExperimentSpec) -> Result<BuiltSystem, RunError> {
    let name = spec.system.as_str();
    let alpha = spec.alpha;
    match name {
        "heat-cycle" => {
            let n = 10;
            let r = alpha.unwrap_or(1.0);
            Ok(BuiltSystem::Discrete(heat_equation_system(
                n,
                spec.eta,
                &vec![1.0; n],
                &vec![1.0; n],
                &vec![r; n],
            )?))
        }
        "heat-cycle-stable" => {
            let n = 10;
            let r = alpha.unwrap_or(1.0);
            Ok(BuiltSystem::Discrete(heat_equation_stable_system(
                n,
                spec.eta,
                spec.rho,
                &vec![1.0; n],
                &vec![1.0; n],
                &vec![r; n],
            )?))
        }
        "counterexample" => Ok(BuiltSystem::Discrete(counterexample_system(100, 1.1)?)),
        "toy-rho" => Ok(BuiltSystem::Discrete(counterexample_system(100, (-spec.rho).exp())?)),
        "thermal-grid" => Ok(BuiltSystem::Discretized(thermal_grid_system(
            10,
            10,
            None,
            1.0,
            alpha.unwrap_or(3.0),
            spec.dt.unwrap_or(0.25),
            spec.seed,
        )?)),
        "swing-synthetic" => {
            let lines = synthetic_bus_network(145, spec.seed);
            Ok(BuiltSystem::Discretized(swing_dynamics_system(
                145,
                &lines,
                132e3,
                1e5,
                0.1,
                alpha.unwrap_or(0.5),
                alpha.unwrap_or(0.5),
                spec.dt.unwrap_or(5e-6),
            )?))
        }
        other => {
            let path = Path::new(other);
            if path.exists() {
                Ok(BuiltSystem::Discrete(archive::load_problem(path)?))
            } else {
                Err(RunError::Usage(format!(
                    "unknown system '{other}' (builtins: {}; or pass an archive path)",
                    BUILTIN_NAMES.join(", ")
                )))
            }
        }
    }
}
