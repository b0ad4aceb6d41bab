//! Distance-truncated controllers and their certified cost gap.
//!
//! `truncate` zeroes every gain block at hop distance `kappa` or farther, so
//! each agent only needs state from its `(kappa-1)`-hop neighborhood. Given a
//! valid `(c_K, gamma_K)` envelope of the optimal gain and a `(tau, rho)`
//! certificate of the optimal closed loop, the truncated loop is provably
//! stable past a threshold radius and its extra cost is bounded by
//! `(2 tau / (1 - e^{-rho})) ||R + B'PB|| sqrt(N min(n_x, n_u)) c_K e^{-gamma_K kappa}`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::block::{spectral_norm, BlockMatrix, SedCertificate};
use crate::error::{Error, Result};
use crate::riccati::{check_power_envelope, closed_loop_cost, spectral_radius, StabilityCertificate};
use crate::systems::LqrProblem;
use crate::topology::Topology;

/// Zeroes all blocks with `dist(i,j) >= kappa` (unreachable pairs count as
/// far). Blocks inside the radius are copied exactly.
pub fn truncate(k: &BlockMatrix, topo: &Topology, kappa: u32) -> Result<BlockMatrix> {
    if kappa == 0 {
        return Err(Error::InvalidInput("truncation radius must be at least 1".into()));
    }
    if k.block_rows() != topo.agent_count() || k.block_cols() != topo.agent_count() {
        return Err(Error::ShapeError("gain blocks do not match the topology".into()));
    }
    let mut out = k.clone();
    for i in 0..topo.agent_count() {
        for j in 0..topo.agent_count() {
            if topo.distance(i, j) >= kappa {
                out.zero_block(i, j);
            }
        }
    }
    Ok(out)
}

/// Truncation-radius threshold `ln(2 tau c_K sqrt(N) ||B|| / (1 - e^{-rho})) / gamma_K`
/// past which the truncated closed loop keeps a stability envelope.
pub fn kappa_threshold(
    cert: &StabilityCertificate,
    c_k: f64,
    gamma_k: f64,
    b_norm: f64,
    n_agents: usize,
) -> Result<f64> {
    if gamma_k <= 0.0 {
        return Err(Error::ThresholdUndefined(
            "gain envelope rate is zero; no finite truncation threshold".into(),
        ));
    }
    let arg = 2.0 * cert.tau * c_k * (n_agents as f64).sqrt() * b_norm
        / (1.0 - (-cert.rho).exp());
    Ok(arg.ln() / gamma_k)
}

/// Verifies the slowed stability envelope claimed for truncations past the
/// threshold: `||(A - B K_trunc)^k|| <= tau ((1 + e^{-rho})/2)^k` for
/// `k <= k_max`, after a spectral-radius gate.
pub fn check_truncation_stability(
    prob: &LqrProblem,
    k: &BlockMatrix,
    kappa: u32,
    cert: &StabilityCertificate,
    k_max: usize,
) -> Result<bool> {
    let k_trunc = truncate(k, prob.topology(), kappa)?;
    let a_cl = prob.a().data() - prob.b().data() * k_trunc.data();
    if !(spectral_radius(&a_cl) < 1.0) {
        return Ok(false);
    }
    let factor = (1.0 + (-cert.rho).exp()) / 2.0;
    check_power_envelope(&a_cl, cert.tau, factor, k_max)
}

/// One row of a truncation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationReport {
    pub kappa: u32,
    pub stable: bool,
    /// `+inf` when the truncated loop is unstable.
    pub cost_trunc: f64,
    pub cost_opt: f64,
    pub gap: f64,
    pub theorem4_bound: f64,
    pub kappa_threshold: f64,
}

/// Sweeps truncation radii, evaluating stability, cost gap, the certified
/// bound and the stability threshold for each radius. Instability is data
/// (cost sentinel `+inf`), not an error.
///
/// The `(tau, rho)` certificate is fitted to the optimal closed loop and
/// `(c_K, gamma_K)` must be an envelope (zero-violation) certificate of `K`.
pub fn gap_sweep(
    prob: &LqrProblem,
    k: &BlockMatrix,
    p: &DMatrix<f64>,
    cl_cert: &StabilityCertificate,
    k_env: &SedCertificate,
    kappa_range: std::ops::RangeInclusive<u32>,
) -> Result<Vec<TruncationReport>> {
    if k_env.max_violation != 0.0 {
        return Err(Error::InvalidInput(
            "gap_sweep needs an envelope certificate with zero violations".into(),
        ));
    }
    let cost_opt = closed_loop_cost(prob, k.data())?;
    let b = prob.b().data();
    let r = prob.r().data();
    let rp = r + b.tr_mul(&(p * b));
    let rp_norm = spectral_norm(&rp)?;
    let b_norm = spectral_norm(b)?;
    let n = prob.topology().agent_count();
    let scale = 2.0 * cl_cert.tau / (1.0 - (-cl_cert.rho).exp())
        * rp_norm
        * ((n * prob.n_x().min(prob.n_u())) as f64).sqrt()
        * k_env.c;
    let threshold = if k_env.gamma > 0.0 {
        kappa_threshold(cl_cert, k_env.c, k_env.gamma, b_norm, n)?
    } else {
        f64::INFINITY
    };
    let kappas: Vec<u32> = kappa_range.collect();
    let mut reports: Vec<TruncationReport> = kappas
        .into_par_iter()
        .map(|kappa| -> Result<TruncationReport> {
            let k_trunc = truncate(k, prob.topology(), kappa)?;
            let bound = scale * (-k_env.gamma * f64::from(kappa)).exp();
            match closed_loop_cost(prob, k_trunc.data()) {
                Ok(cost_trunc) => Ok(TruncationReport {
                    kappa,
                    stable: true,
                    cost_trunc,
                    cost_opt,
                    gap: cost_trunc - cost_opt,
                    theorem4_bound: bound,
                    kappa_threshold: threshold,
                }),
                Err(Error::UnstableController(_)) => Ok(TruncationReport {
                    kappa,
                    stable: false,
                    cost_trunc: f64::INFINITY,
                    cost_opt,
                    gap: f64::INFINITY,
                    theorem4_bound: bound,
                    kappa_threshold: threshold,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by_key(|r| r.kappa);
    Ok(reports)
}

/// Truncation-error report against the gain envelope:
/// `||K - K_trunc|| <= sqrt(N) c_K e^{-gamma_K kappa}` and
/// `||K - K_trunc||_F <= sqrt(N min(n_x, n_u)) c_K e^{-gamma_K kappa}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationErrorReport {
    pub kappa: u32,
    pub spectral_err: f64,
    pub spectral_bound: f64,
    pub frobenius_err: f64,
    pub frobenius_bound: f64,
}

impl TruncationErrorReport {
    pub fn passed(&self) -> bool {
        self.spectral_err <= self.spectral_bound * (1.0 + 1e-12)
            && self.frobenius_err <= self.frobenius_bound * (1.0 + 1e-12)
    }
}

pub fn truncation_error_check(
    prob: &LqrProblem,
    k: &BlockMatrix,
    k_env: &SedCertificate,
    kappa: u32,
) -> Result<TruncationErrorReport> {
    let k_trunc = truncate(k, prob.topology(), kappa)?;
    let diff = k.data() - k_trunc.data();
    let n = prob.topology().agent_count() as f64;
    let decay = (-k_env.gamma * f64::from(kappa)).exp();
    Ok(TruncationErrorReport {
        kappa,
        spectral_err: spectral_norm(&diff)?,
        spectral_bound: n.sqrt() * k_env.c * decay,
        frobenius_err: diff.norm(),
        frobenius_bound: (n * prob.n_x().min(prob.n_u()) as f64).sqrt() * k_env.c * decay,
    })
}
