//! Networked-LQR analysis toolkit for spatially-exponential-decaying (SED)
//! systems.
//!
//! The crate synthesizes optimal and distance-truncated controllers for
//! network LQR problems whose data decays exponentially with graph distance,
//! computes the optimal truncated disturbance-response parameterization, and
//! numerically certifies the decay rates, eigenvalue bounds and cost-gap
//! bounds the analysis of such systems rests on.
//!
//! Module map:
//!
//! * [`topology`] - agent graphs, hop distances, block dimensions;
//! * [`block`] - block-partitioned matrices, norms, decay certificates;
//! * [`systems`] - concrete problem generators and exact discretization;
//! * [`riccati`] - DARE solvers, Lyapunov sums, stability certificates;
//! * [`disturbance`] - the `M L + J = 0` parameterization and its bounds;
//! * [`locality`] - distance truncation and certified cost gaps;
//! * [`sim`] - Monte-Carlo cross-validation;
//! * [`archive`] - on-disk CSV/JSON archives;
//! * [`rng`] - the documented deterministic noise streams.

/// Re-export of the linear-algebra backend used in public signatures.
pub use nalgebra;

pub mod archive;
pub mod block;
pub mod disturbance;
pub mod error;
pub mod locality;
pub mod riccati;
pub mod rng;
pub mod sim;
pub mod systems;
pub mod topology;

pub use block::{BlockMatrix, FitMode, SedCertificate};
pub use error::{Error, Result};
pub use riccati::{RiccatiSolution, StabilityCertificate};
pub use systems::{ContinuousSystem, DiscretizedLqr, LqrProblem};
pub use topology::Topology;
