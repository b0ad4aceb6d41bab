//! Discrete-time Riccati and Lyapunov machinery: the optimal gain, the
//! open-loop cost sum `G`, closed-loop average costs and transient-aware
//! exponential stability certificates.
//!
//! The default DARE solver is plain fixed-point value iteration: desk scale
//! keeps it adequate and the iteration doubles as a brute-force reference for
//! the disturbance-response solves. A structure-preserving doubling solver is
//! provided for near-marginal instances (e.g. finely discretized continuous
//! systems) where the value iteration's linear rate is hopeless; both enforce
//! the same residual invariant.

use nalgebra::DMatrix;

use crate::block::{spectral_norm, BlockMatrix};
use crate::error::{Error, Result};
use crate::systems::LqrProblem;

/// Reported stability rates are capped here (nilpotent dynamics would fit an
/// infinite rate), mirroring the decay-rate cap.
pub const RHO_CAP: f64 = 50.0;

/// Safety margin taken off `-ln(spectral radius)` when fitting stability
/// certificates.
pub const STABILITY_MARGIN: f64 = 0.05;

/// Default power horizon checked exhaustively by [`fit_stability`].
pub const DEFAULT_K_MAX: usize = 200;

/// Largest eigenvalue modulus.
///
/// Degenerate shapes (zero, triangular, symmetric) take exact fast paths:
/// the general Francis-QR iteration is run with a bounded sweep count (it
/// can stall on matrices with repeated eigenvalues at the origin), and a
/// Gelfand-formula estimate `||A^{2^k}||^{1/2^k}` covers the remainder.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 || m.amax() == 0.0 {
        return 0.0;
    }
    if n == 1 {
        return m[(0, 0)].abs();
    }
    let mut lower_zero = true;
    let mut upper_zero = true;
    let mut symmetric = true;
    for i in 0..n {
        for j in 0..i {
            if m[(i, j)] != 0.0 {
                lower_zero = false;
            }
            if m[(j, i)] != 0.0 {
                upper_zero = false;
            }
            if m[(i, j)] != m[(j, i)] {
                symmetric = false;
            }
        }
    }
    if lower_zero || upper_zero {
        return (0..n).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max);
    }
    if symmetric {
        if let Some(se) = nalgebra::SymmetricEigen::try_new(m.clone(), 1e-13, 100_000) {
            return se.eigenvalues.iter().map(|l| l.abs()).fold(0.0f64, f64::max);
        }
    } else if let Some(schur) = m.clone().try_schur(1e-13, 100_000) {
        return schur.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0f64, f64::max);
    }
    gelfand_radius(m)
}

/// Normalized repeated squaring: returns `||A^{2^k}||^{1/2^k}`, an upper
/// estimate of the spectral radius converging from above.
fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let mut y = m.clone();
    let mut log_estimate = 0.0f64;
    let mut power = 1.0f64;
    for _ in 0..20 {
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        log_estimate += norm.ln() / power;
        let z = &y / norm;
        y = &z * &z;
        power *= 2.0;
    }
    log_estimate.exp()
}

/// Transient-aware exponential stability envelope: `||A^k|| <= tau e^{-rho k}`
/// verified exhaustively for `k <= horizon_checked`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StabilityCertificate {
    pub tau: f64,
    pub rho: f64,
    pub horizon_checked: usize,
}

impl StabilityCertificate {
    /// Joint certificate valid for both operands (largest transient, slowest
    /// rate).
    pub fn combine(&self, other: &StabilityCertificate) -> StabilityCertificate {
        StabilityCertificate {
            tau: self.tau.max(other.tau),
            rho: self.rho.min(other.rho),
            horizon_checked: self.horizon_checked.min(other.horizon_checked),
        }
    }
}

/// Fits `(tau, rho)` for a Schur-stable matrix: `rho` is
/// `-ln(spectral radius)` shaved by [`STABILITY_MARGIN`] and capped at
/// [`RHO_CAP`]; `tau` is the smallest constant covering all powers up to
/// `k_max`, clamped at 1.
pub fn fit_stability(a: &DMatrix<f64>, k_max: usize) -> Result<StabilityCertificate> {
    let radius = spectral_radius(a);
    if !(radius < 1.0) {
        return Err(Error::CertificateUnavailable(format!(
            "spectral radius {radius} >= 1: no exponential stability certificate"
        )));
    }
    let rho = ((-radius.ln()) * (1.0 - STABILITY_MARGIN)).min(RHO_CAP);
    let mut log_norms = Vec::with_capacity(k_max + 1);
    let mut power = DMatrix::<f64>::identity(a.nrows(), a.ncols());
    for k in 0..=k_max {
        log_norms.push(spectral_norm(&power)?.ln());
        if k < k_max {
            power = &power * a;
        }
    }
    // tau in log space; exact zeros (log -inf) impose no constraint.
    let mut log_tau = 0.0f64;
    for (k, &ln_norm) in log_norms.iter().enumerate() {
        if ln_norm.is_finite() {
            log_tau = log_tau.max(ln_norm + rho * k as f64);
        }
    }
    let cert = StabilityCertificate { tau: log_tau.exp(), rho, horizon_checked: k_max };
    for (k, &ln_norm) in log_norms.iter().enumerate() {
        if ln_norm > log_tau - rho * k as f64 + 1e-9 {
            return Err(Error::NumericError(format!(
                "stability certificate failed self-verification at power {k}"
            )));
        }
    }
    Ok(cert)
}

/// Exhaustively checks `||A^k|| <= tau * decay_factor^k` for `k <= k_max`
/// (log-space comparison with 1e-9 slack).
pub fn check_power_envelope(
    a: &DMatrix<f64>,
    tau: f64,
    decay_factor: f64,
    k_max: usize,
) -> Result<bool> {
    let log_tau = tau.ln();
    let log_decay = decay_factor.ln();
    let mut power = DMatrix::<f64>::identity(a.nrows(), a.ncols());
    for k in 0..=k_max {
        let ln_norm = spectral_norm(&power)?.ln();
        if ln_norm > log_tau + log_decay * k as f64 + 1e-9 {
            return Ok(false);
        }
        if k < k_max {
            power = &power * a;
        }
    }
    Ok(true)
}

/// Infinite Lyapunov sum `G = sum_t (A^t)' Q A^t` with its verification data.
#[derive(Debug, Clone)]
pub struct LyapunovSum {
    pub g: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) fn lyapunov_sum_doubling(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let radius = spectral_radius(a);
    if !(radius < 1.0) {
        return Err(Error::UnstableInput(format!(
            "Lyapunov sum diverges: spectral radius {radius} >= 1"
        )));
    }
    let mut g = q.clone();
    let mut m = a.clone();
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let update = m.tr_mul(&(&g * &m));
        g += &update;
        m = &m * &m;
        if update.norm() <= 1e-14 * g.norm() {
            break;
        }
    }
    g = (&g + g.transpose()) * 0.5;
    Ok((g, iterations))
}

/// Solves `A' G A - G + Q = 0` by doubling, verifying the residual to
/// `1e-9 ||G||`. The certificate argument documents the caller's evidence
/// that `A` is stable; the spectral radius is re-checked regardless.
pub fn solve_lyapunov_g(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    _stability: &StabilityCertificate,
) -> Result<LyapunovSum> {
    let (g, iterations) = lyapunov_sum_doubling(a, q)?;
    let residual_mat = a.tr_mul(&(&g * a)) - &g + q;
    let residual = spectral_norm(&residual_mat)?;
    let scale = spectral_norm(&g)?;
    if residual > 1e-9 * scale.max(1e-300) {
        return Err(Error::NumericError(format!(
            "Lyapunov residual {residual:.3e} exceeds 1e-9 * ||G|| = {:.3e}",
            1e-9 * scale
        )));
    }
    Ok(LyapunovSum { g, iterations, residual })
}

/// How a Riccati solution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiccatiMethod {
    ValueIteration,
    Doubling,
}

impl std::fmt::Display for RiccatiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RiccatiMethod::ValueIteration => write!(f, "value-iteration"),
            RiccatiMethod::Doubling => write!(f, "doubling"),
        }
    }
}

/// Cost-to-go `P`, optimal gain `K` (for `u = -K x`) and solve diagnostics.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub k: BlockMatrix,
    pub residual: f64,
    pub iterations: usize,
    pub method: RiccatiMethod,
}

/// Builds `K` from `P`, verifies the fixed-point residual to `1e-9 ||P||`
/// and checks that the closed loop is Schur-stable.
fn finalize_solution(
    prob: &LqrProblem,
    p: DMatrix<f64>,
    iterations: usize,
    method: RiccatiMethod,
) -> Result<RiccatiSolution> {
    let a = prob.a().data();
    let b = prob.b().data();
    let q = prob.q().data();
    let r = prob.r().data();
    let s = prob.s().data();
    let rp = r + b.tr_mul(&(&p * b));
    let rp_chol = ((&rp + rp.transpose()) * 0.5)
        .cholesky()
        .ok_or_else(|| Error::RiccatiFailure("R + B'PB is not positive definite".into()))?;
    let cross = b.tr_mul(&(&p * a)) + s;
    let k = rp_chol.solve(&cross);
    let residual_mat = &p - (a.tr_mul(&(&p * a)) - cross.tr_mul(&k) + q);
    let residual = spectral_norm(&residual_mat)?;
    let p_norm = spectral_norm(&p)?;
    if residual > 1e-9 * p_norm.max(1e-300) {
        return Err(Error::RiccatiFailure(format!(
            "residual {residual:.3e} exceeds 1e-9 * ||P|| = {:.3e}",
            1e-9 * p_norm
        )));
    }
    let rho_cl = spectral_radius(&(a - b * &k));
    if !(rho_cl < 1.0) {
        return Err(Error::RiccatiFailure(format!(
            "closed loop not Schur-stable (spectral radius {rho_cl})"
        )));
    }
    let k = BlockMatrix::input_state(k, prob.topology())?;
    Ok(RiccatiSolution { p, k, residual, iterations, method })
}

/// Fixed-point value iteration
/// `P <- A'PA - (A'PB + S')(R + B'PB)^{-1}(B'PA + S) + Q` from `P_0 = Q`,
/// stopping at relative change 1e-12 (at most 100 000 sweeps).
pub fn solve_dare(prob: &LqrProblem) -> Result<RiccatiSolution> {
    let a = prob.a().data();
    let b = prob.b().data();
    let q = prob.q().data();
    let r = prob.r().data();
    let s = prob.s().data();
    let mut p = q.clone();
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        let rp = r + b.tr_mul(&(&p * b));
        let rp_chol = ((&rp + rp.transpose()) * 0.5)
            .cholesky()
            .ok_or_else(|| Error::RiccatiFailure("R + B'PB lost definiteness".into()))?;
        let cross = b.tr_mul(&(&p * a)) + s;
        let gain = rp_chol.solve(&cross);
        let mut p_next = a.tr_mul(&(&p * a)) - cross.tr_mul(&gain) + q;
        p_next = (&p_next + p_next.transpose()) * 0.5;
        let norm = p_next.norm();
        if !norm.is_finite() || norm > 1e12 {
            return Err(Error::RiccatiFailure(format!(
                "iteration diverged (||P|| = {norm:.3e}); input likely not stabilizable"
            )));
        }
        let change = (&p_next - &p).norm();
        p = p_next;
        if change <= 1e-12 * norm.max(1e-300) {
            break;
        }
        if iterations >= 100_000 {
            return Err(Error::RiccatiFailure(
                "value iteration hit 100000 sweeps without converging".into(),
            ));
        }
    }
    finalize_solution(prob, p, iterations, RiccatiMethod::ValueIteration)
}

/// Structure-preserving doubling iteration for the same equation. Quadratic
/// convergence makes it the practical route for closed loops with spectral
/// radius near 1 (finely discretized continuous systems), where value
/// iteration would need millions of sweeps.
pub fn solve_dare_doubling(prob: &LqrProblem) -> Result<RiccatiSolution> {
    let a = prob.a().data();
    let b = prob.b().data();
    let q = prob.q().data();
    let r = prob.r().data();
    let s = prob.s().data();
    let n = a.nrows();
    let r_chol = ((r + r.transpose()) * 0.5)
        .cholesky()
        .ok_or_else(|| Error::RiccatiFailure("R is not positive definite".into()))?;
    // Cross-term elimination: u = v - R^{-1} S x.
    let r_inv_s = r_chol.solve(s);
    let a_tilde = a - b * &r_inv_s;
    let q_tilde = q - s.tr_mul(&r_inv_s);

    let mut ak = a_tilde;
    let mut gk = b * r_chol.solve(&b.transpose());
    let mut pk = (&q_tilde + q_tilde.transpose()) * 0.5;
    let identity = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        let w = &identity + &gk * &pk;
        let lu = w.lu();
        let w_inv_ak = lu
            .solve(&ak)
            .ok_or_else(|| Error::RiccatiFailure("doubling cage matrix singular".into()))?;
        let w_inv_gk = lu
            .solve(&gk)
            .ok_or_else(|| Error::RiccatiFailure("doubling cage matrix singular".into()))?;
        let mut p_next = &pk + ak.tr_mul(&(&pk * &w_inv_ak));
        p_next = (&p_next + p_next.transpose()) * 0.5;
        let mut g_next = &gk + &ak * (&w_inv_gk * ak.transpose());
        g_next = (&g_next + g_next.transpose()) * 0.5;
        let a_next = &ak * &w_inv_ak;
        let norm = p_next.norm();
        if !norm.is_finite() || norm > 1e14 {
            return Err(Error::RiccatiFailure(format!(
                "doubling diverged (||P|| = {norm:.3e}); input likely not stabilizable"
            )));
        }
        let change = (&p_next - &pk).norm();
        pk = p_next;
        gk = g_next;
        ak = a_next;
        if change <= 1e-13 * norm.max(1e-300) {
            break;
        }
        if iterations >= 200 {
            return Err(Error::RiccatiFailure("doubling hit 200 sweeps without converging".into()));
        }
    }
    finalize_solution(prob, pk, iterations, RiccatiMethod::Doubling)
}

/// Picks the solver: doubling when the open loop is (near-)marginal or
/// unstable, value iteration otherwise.
pub fn solve_dare_auto(prob: &LqrProblem) -> Result<RiccatiSolution> {
    if spectral_radius(prob.a().data()) >= 0.98 {
        solve_dare_doubling(prob)
    } else {
        solve_dare(prob)
    }
}

/// Pre-stabilization for unstable open loops: substitute `u = v - K0 x`
/// (equivalently `v = u + K0 x`), solve the transformed problem
/// `(A - B K0, B, Q - K0'S - S'K0 + K0'R K0, R, S - R K0)` and map the gain
/// back as `K = K_bar + K0`. The cost-to-go is invariant, and the returned
/// residual is re-verified against the *original* equation.
pub fn solve_dare_prestabilized(
    prob: &LqrProblem,
    k0: &DMatrix<f64>,
    use_doubling: bool,
) -> Result<RiccatiSolution> {
    let a = prob.a().data();
    let b = prob.b().data();
    let q = prob.q().data();
    let r = prob.r().data();
    let s = prob.s().data();
    let a_bar = a - b * k0;
    let radius = spectral_radius(&a_bar);
    if !(radius < 1.0) {
        return Err(Error::UnstableInput(format!(
            "pre-stabilizer leaves spectral radius {radius} >= 1"
        )));
    }
    let q_bar = q - k0.tr_mul(s) - s.tr_mul(k0) + k0.tr_mul(&(r * k0));
    let s_bar = s - r * k0;
    let transformed = LqrProblem::new(
        prob.topology().clone(),
        a_bar,
        b.clone(),
        (&q_bar + q_bar.transpose()) * 0.5,
        r.clone(),
        s_bar,
    )?;
    let solved = if use_doubling { solve_dare_doubling(&transformed)? } else { solve_dare(&transformed)? };
    let k = solved.k.data() + k0;
    let p = solved.p;
    // Re-verify against the original problem; this also fixes the back-map
    // sign beyond doubt.
    let mut out = finalize_solution(prob, p, solved.iterations, solved.method)?;
    let drift = (out.k.data() - &k).amax();
    if drift > 1e-6 * k.amax().max(1.0) {
        return Err(Error::RiccatiFailure(format!(
            "pre-stabilized gain map disagrees with direct gain by {drift:.3e}"
        )));
    }
    out.iterations = solved.iterations;
    Ok(out)
}

/// Infinite-horizon average cost of the state feedback `u = -Kp x` under unit
/// process noise: `trace(P_cl)` with
/// `P_cl = sum_t (A_cl^t)' (Q + Kp'R Kp - Kp'S - S'Kp) A_cl^t`,
/// `A_cl = A - B Kp`.
pub fn closed_loop_cost(prob: &LqrProblem, kp: &DMatrix<f64>) -> Result<f64> {
    let a = prob.a().data();
    let b = prob.b().data();
    let a_cl = a - b * kp;
    let radius = spectral_radius(&a_cl);
    if !(radius < 1.0) {
        return Err(Error::UnstableController(format!(
            "closed loop spectral radius {radius} >= 1"
        )));
    }
    let q = prob.q().data();
    let r = prob.r().data();
    let s = prob.s().data();
    let q_cl = q + kp.tr_mul(&(r * kp)) - kp.tr_mul(s) - s.tr_mul(kp);
    let (p_cl, _) = lyapunov_sum_doubling(&a_cl, &((&q_cl + q_cl.transpose()) * 0.5))?;
    Ok(p_cl.trace())
}

/// Verifies `||G A^m|| <= tau^2 ||Q|| e^{-rho m} / (1 - e^{-2 rho})` for all
/// `m <= m_max` (log-space comparison).
pub fn g_decay_check(
    g: &LyapunovSum,
    a: &DMatrix<f64>,
    q_norm: f64,
    cert: &StabilityCertificate,
    m_max: usize,
) -> Result<bool> {
    let log_scale = 2.0 * cert.tau.ln() + q_norm.ln() - (1.0 - (-2.0 * cert.rho).exp()).ln();
    let mut x = g.g.clone();
    for m in 0..=m_max {
        let ln_norm = spectral_norm(&x)?.ln();
        if ln_norm > log_scale - cert.rho * m as f64 + 1e-9 {
            return Ok(false);
        }
        if m < m_max {
            x = &x * a;
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{
        counterexample_system, heat_equation_stable_system, heat_equation_system,
        random_stable_sed_system,
    };
    use crate::topology::Topology;
    use approx::assert_relative_eq;

    /// Closed-form oracle for the scalar DARE with a=0.5, b=q=r=1, s=0:
    /// p^2 = 1 + 0.25 p.
    const SCALAR_P: f64 = 1.1327822185373186;
    const SCALAR_K: f64 = 0.2655644370746374;

    fn scalar_problem(a: f64) -> LqrProblem {
        let topo = Topology::from_edge_list(1, &[], vec![1], vec![1]).unwrap();
        LqrProblem::new(
            topo,
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn dare_deadbeat() {
        let topo = Topology::build_cycle(3, 1, 1).unwrap();
        let prob = LqrProblem::new(
            topo,
            DMatrix::zeros(3, 3),
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 3),
        )
        .unwrap();
        let sol = solve_dare(&prob).unwrap();
        assert_relative_eq!((sol.p - DMatrix::identity(3, 3)).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(sol.k.data().norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dare_scalar_oracle() {
        let prob = scalar_problem(0.5);
        let sol = solve_dare(&prob).unwrap();
        assert_relative_eq!(sol.p[(0, 0)], SCALAR_P, epsilon = 1e-10);
        assert_relative_eq!(sol.k.data()[(0, 0)], SCALAR_K, epsilon = 1e-10);
        assert!(sol.residual <= 1e-9 * sol.p.norm());
    }

    #[test]
    fn doubling_agrees_with_value_iteration() {
        for seed in 0..6 {
            let prob = random_stable_sed_system(seed);
            let vi = solve_dare(&prob).unwrap();
            let sda = solve_dare_doubling(&prob).unwrap();
            let scale = vi.p.norm();
            assert!(
                (&vi.p - &sda.p).norm() <= 1e-8 * scale,
                "seed {seed}: P mismatch {:.3e}",
                (&vi.p - &sda.p).norm() / scale
            );
            assert!(sda.iterations < 60, "doubling should converge quadratically");
        }
        let prob = scalar_problem(0.5);
        let sol = solve_dare_doubling(&prob).unwrap();
        assert_relative_eq!(sol.p[(0, 0)], SCALAR_P, epsilon = 1e-10);
    }

    #[test]
    fn dare_counterexample_unstable_open_loop() {
        // A = 1.1 I is open-loop unstable yet stabilizable; the solve must
        // produce a Schur-stable closed loop with a dense-looking gain.
        let prob = counterexample_system(20, 1.1).unwrap();
        let sol = solve_dare_auto(&prob).unwrap();
        assert!(spectral_radius(&(prob.a().data() - prob.b().data() * sol.k.data())) < 1.0);
        // Upper-triangular reach: far upper entries stay non-negligible.
        let k = sol.k.data();
        assert!(k[(0, 10)].abs() > 1e-3 * k.amax());
    }

    #[test]
    fn prestabilized_matches_direct() {
        // Marginal heat equation, pre-stabilizer K0 = I (Example-4 route).
        let n = 10;
        let prob = heat_equation_system(n, 0.1, &[1.0; 10], &[1.0; 10], &[1.0; 10]).unwrap();
        let direct = solve_dare_doubling(&prob).unwrap();
        let pre = solve_dare_prestabilized(&prob, &DMatrix::identity(n, n), false).unwrap();
        assert!((&pre.p - &direct.p).norm() <= 1e-7 * direct.p.norm());
        assert!((pre.k.data() - direct.k.data()).norm() <= 1e-6 * direct.k.data().norm());
        let c_pre = closed_loop_cost(&prob, pre.k.data()).unwrap();
        let c_dir = closed_loop_cost(&prob, direct.k.data()).unwrap();
        assert!(c_pre <= c_dir + 1e-9 * c_dir.abs().max(1.0));
    }

    #[test]
    fn lyapunov_sum_cases() {
        let cert = StabilityCertificate { tau: 1.0, rho: 0.5, horizon_checked: 10 };
        let a = DMatrix::zeros(2, 2);
        let q = DMatrix::identity(2, 2) * 3.0;
        let sum = solve_lyapunov_g(&a, &q, &cert).unwrap();
        assert_relative_eq!((&sum.g - &q).norm(), 0.0, epsilon = 1e-14);

        // Scalar geometric series: g = 1 / (1 - 0.25) = 4/3.
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let sum = solve_lyapunov_g(&a, &q, &cert).unwrap();
        assert_relative_eq!(sum.g[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);

        let unstable = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            solve_lyapunov_g(&unstable, &q, &cert),
            Err(Error::UnstableInput(_))
        ));
    }

    #[test]
    fn lyapunov_residual_on_heat_variant() {
        let prob =
            heat_equation_stable_system(10, 0.1, 0.1, &[1.0; 10], &[1.0; 10], &[1.0; 10]).unwrap();
        let cert = fit_stability(prob.a().data(), 50).unwrap();
        let sum = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        assert!(sum.residual <= 1e-9 * spectral_norm(&sum.g).unwrap());
    }

    #[test]
    fn closed_loop_cost_cases() {
        let topo = Topology::build_cycle(4, 1, 1).unwrap();
        let prob = LqrProblem::new(
            topo,
            DMatrix::zeros(4, 4),
            DMatrix::identity(4, 4),
            DMatrix::identity(4, 4),
            DMatrix::identity(4, 4),
            DMatrix::zeros(4, 4),
        )
        .unwrap();
        assert_relative_eq!(closed_loop_cost(&prob, &DMatrix::zeros(4, 4)).unwrap(), 4.0);

        let prob = scalar_problem(0.5);
        let sol = solve_dare(&prob).unwrap();
        let c = closed_loop_cost(&prob, sol.k.data()).unwrap();
        assert_relative_eq!(c, SCALAR_P, epsilon = 1e-9);

        let unstable_gain = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(
            closed_loop_cost(&prob, &unstable_gain),
            Err(Error::UnstableController(_))
        ));
    }

    #[test]
    fn cost_equals_trace_p_and_optimality() {
        for seed in [3u64, 11, 27] {
            let prob = random_stable_sed_system(seed);
            let sol = solve_dare(&prob).unwrap();
            let c_opt = closed_loop_cost(&prob, sol.k.data()).unwrap();
            assert_relative_eq!(c_opt, sol.p.trace(), max_relative = 1e-8);

            // Random stabilizing perturbations never beat the optimum.
            let mut rng = crate::rng::NoiseStream::new(seed, 99);
            let k = sol.k.data();
            let mut tried = 0;
            while tried < 20 {
                let mut delta = DMatrix::<f64>::zeros(k.nrows(), k.ncols());
                for x in delta.iter_mut() {
                    *x = rng.next_normal();
                }
                let dn = delta.norm();
                if dn == 0.0 {
                    continue;
                }
                let scale = 0.1 * k.norm() / dn;
                let kp = k + delta * scale;
                if spectral_radius(&(prob.a().data() - prob.b().data() * &kp)) < 1.0 {
                    tried += 1;
                    let c = closed_loop_cost(&prob, &kp).unwrap();
                    assert!(c >= c_opt - 1e-9, "seed {seed}: perturbed cost {c} < optimal {c_opt}");
                }
            }
        }
    }

    #[test]
    fn stability_certificate_cases() {
        // Normal scaling: A = e^{-0.1} I.
        let a = DMatrix::<f64>::identity(3, 3) * (-0.1f64).exp();
        let cert = fit_stability(&a, 100).unwrap();
        assert_relative_eq!(cert.rho, 0.1 * 0.95, epsilon = 1e-12);
        assert_relative_eq!(cert.tau, 1.0, epsilon = 1e-12);

        // Nilpotent: rate capped.
        let z = DMatrix::<f64>::zeros(2, 2);
        let cert = fit_stability(&z, 10).unwrap();
        assert_eq!(cert.rho, RHO_CAP);
        assert_relative_eq!(cert.tau, 1.0);

        // Jordan block: transient growth forces tau > 1.
        let j = DMatrix::from_row_slice(2, 2, &[0.9, 1.0, 0.0, 0.9]);
        let cert = fit_stability(&j, 200).unwrap();
        assert!(cert.tau > 1.0);
        // Exhaustive envelope recheck.
        let mut p = DMatrix::<f64>::identity(2, 2);
        for k in 0..=200 {
            let bound = cert.tau.ln() - cert.rho * k as f64;
            let ln_norm = spectral_norm(&p).unwrap().ln();
            assert!(ln_norm <= bound + 1e-9);
            p = &p * &j;
        }

        let marginal = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(fit_stability(&marginal, 10), Err(Error::CertificateUnavailable(_))));
    }

    #[test]
    fn g_decay_check_cases() {
        let cert = StabilityCertificate { tau: 1.0, rho: -(0.5f64.ln()) * 0.95, horizon_checked: 50 };
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let g = solve_lyapunov_g(&a, &q, &cert).unwrap();
        assert!(g_decay_check(&g, &a, 1.0, &cert, 50).unwrap());

        // A = 0: single-term sum.
        let a0 = DMatrix::zeros(2, 2);
        let q0 = DMatrix::identity(2, 2);
        let cert0 = fit_stability(&a0, 10).unwrap();
        let g0 = solve_lyapunov_g(&a0, &q0, &cert0).unwrap();
        assert!(g_decay_check(&g0, &a0, 1.0, &cert0, 10).unwrap());

        // Heat-equation stable variant.
        let prob =
            heat_equation_stable_system(10, 0.1, 0.1, &[1.0; 10], &[1.0; 10], &[1.0; 10]).unwrap();
        let cert = fit_stability(prob.a().data(), DEFAULT_K_MAX).unwrap();
        let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        let q_norm = spectral_norm(prob.q().data()).unwrap();
        assert!(g_decay_check(&g, prob.a().data(), q_norm, &cert, 50).unwrap());
    }
}
