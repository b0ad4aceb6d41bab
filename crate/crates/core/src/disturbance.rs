//! Disturbance-response controllers `u_t = L_1 w_{t-1} + ... + L_H w_{t-H}`.
//!
//! For an open-loop-stable problem the optimal truncated disturbance response
//! solves the linear system `M L + J = 0`, where `M` and `J` are matrix
//! polynomials in the problem data and the Lyapunov sum
//! `G = sum_t (A^t)' Q A^t`:
//!
//! * `M_km = B'GB + R` on the diagonal, `B'G A^{k-m} B + S A^{k-m-1} B`
//!   below it, transposed symmetry above;
//! * `J_k = B'G A^k + S A^{k-1}`.
//!
//! Besides the direct symmetric solve, a truncated Neumann-series solve is
//! provided (the route the decay analysis takes), along with the certified
//! eigenvalue bounds of `M`, the blockwise spatial-decay check of `M` and `J`,
//! and the gain-gap bound tying `-L_1` to the optimal state-feedback gain.

use nalgebra::DMatrix;

use crate::block::{spectral_norm, BlockMatrix};
use crate::error::{Error, Result};
use crate::riccati::{spectral_radius, LyapunovSum, StabilityCertificate};
use crate::systems::LqrProblem;
use crate::topology::Topology;

/// Truncated disturbance-response controller: `H` gain blocks stacked as a
/// `(H n_u) x n_x` matrix, `L_k` in block-row `k`.
#[derive(Debug, Clone)]
pub struct DisturbanceController {
    pub horizon: usize,
    stacked: DMatrix<f64>,
    topology: Topology,
}

impl DisturbanceController {
    pub fn from_stacked(stacked: DMatrix<f64>, horizon: usize, topology: Topology) -> Result<Self> {
        if stacked.nrows() != horizon * topology.n_u() || stacked.ncols() != topology.n_x() {
            return Err(Error::ShapeError(format!(
                "stacked controller has shape {:?}, expected ({}, {})",
                stacked.shape(),
                horizon * topology.n_u(),
                topology.n_x()
            )));
        }
        Ok(DisturbanceController { horizon, stacked, topology })
    }

    pub fn stacked(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    /// Gain block `L_k` (1-based, `k` in `1..=H`) as a dense matrix.
    pub fn l_dense(&self, k: usize) -> Result<DMatrix<f64>> {
        if k == 0 || k > self.horizon {
            return Err(Error::InvalidIndex(format!(
                "L_{k} out of range for horizon {}",
                self.horizon
            )));
        }
        let nu = self.topology.n_u();
        Ok(self.stacked.view(((k - 1) * nu, 0), (nu, self.topology.n_x())).into_owned())
    }

    /// Gain block `L_k` partitioned over the topology.
    pub fn l_block(&self, k: usize) -> Result<BlockMatrix> {
        BlockMatrix::input_state(self.l_dense(k)?, &self.topology)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }
}

/// Assembled disturbance-response system: the symmetric matrix `M`, the
/// right-hand side `J`, the Lyapunov sum they were built from and the
/// certified eigenvalue bounds of `M`.
#[derive(Debug, Clone)]
pub struct DisturbanceSystem {
    pub horizon: usize,
    m: DMatrix<f64>,
    j: DMatrix<f64>,
    g: DMatrix<f64>,
    topology: Topology,
    /// Certified lower bound `lambda_min(R - S Q^{-1} S')`.
    pub lambda_min_bound: f64,
    /// Certified upper bound
    /// `lambda_max(R) + 4 tau^2 (||B||^2 ||Q|| + ||B|| ||S||) / (1 - e^{-2 rho})^2`.
    pub lambda_max_bound: f64,
}

impl DisturbanceSystem {
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn j(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn n_u(&self) -> usize {
        self.topology.n_u()
    }

    pub fn n_x(&self) -> usize {
        self.topology.n_x()
    }

    /// The leading sub-system for a smaller horizon (`M` and `J` of horizon
    /// `h` are leading sub-blocks of the horizon-`H` assembly). Eigenvalue
    /// bounds stay valid by interlacing.
    pub fn leading(&self, h: usize) -> Result<DisturbanceSystem> {
        if h == 0 || h > self.horizon {
            return Err(Error::InvalidIndex(format!(
                "horizon {h} out of range for assembled horizon {}",
                self.horizon
            )));
        }
        let nu = self.n_u();
        Ok(DisturbanceSystem {
            horizon: h,
            m: self.m.view((0, 0), (h * nu, h * nu)).into_owned(),
            j: self.j.view((0, 0), (h * nu, self.n_x())).into_owned(),
            g: self.g.clone(),
            topology: self.topology.clone(),
            lambda_min_bound: self.lambda_min_bound,
            lambda_max_bound: self.lambda_max_bound,
        })
    }
}

use crate::block::sym_eig_range;

/// Assembles `M` and `J` for horizon `H`. Needs an open-loop-stable problem
/// (the Lyapunov sum `G` must exist) and its fitted stability certificate for
/// the eigenvalue bounds. The `A`-power chain is computed once incrementally.
pub fn assemble(
    prob: &LqrProblem,
    g: &LyapunovSum,
    cert: &StabilityCertificate,
    horizon: usize,
) -> Result<DisturbanceSystem> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let a = prob.a().data();
    let b = prob.b().data();
    let r = prob.r().data();
    let s = prob.s().data();
    if !(spectral_radius(a) < 1.0) {
        return Err(Error::UnstableInput(
            "disturbance-response assembly needs an open-loop-stable A".into(),
        ));
    }
    let nu = prob.n_u();
    let nx = prob.n_x();

    // One incremental power chain: entering iteration k, a_pow = A^{k-1} and
    // ga = G A^k. The diagonal block is symmetrized: B'(GB) is symmetric in
    // exact arithmetic but its float evaluation order is not.
    let m_diag = b.tr_mul(&(&g.g * b)) + r;
    let m_diag = (&m_diag + m_diag.transpose()) * 0.5;
    let mut a_pow = DMatrix::<f64>::identity(nx, nx);
    let mut ga = &g.g * a;
    let mut m_off: Vec<DMatrix<f64>> = Vec::with_capacity(horizon.saturating_sub(1));
    let mut j_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let ab = &a_pow * b; // A^{k-1} B
        if k < horizon {
            // Off-diagonal block at lag d = k: B'G A^k B + S A^{k-1} B.
            m_off.push(b.tr_mul(&(&ga * b)) + s * &ab);
        }
        // J_k = B'G A^k + S A^{k-1}.
        j_blocks.push(b.tr_mul(&ga) + s * &a_pow);
        if k < horizon {
            ga = &ga * a;
            a_pow = &a_pow * a;
        }
    }

    let mut m = DMatrix::<f64>::zeros(horizon * nu, horizon * nu);
    for k in 0..horizon {
        m.view_mut((k * nu, k * nu), (nu, nu)).copy_from(&m_diag);
        for mm in 0..k {
            let d = k - mm;
            let block = &m_off[d - 1];
            m.view_mut((k * nu, mm * nu), (nu, nu)).copy_from(block);
            m.view_mut((mm * nu, k * nu), (nu, nu)).copy_from(&block.transpose());
        }
    }
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-10 {
        return Err(Error::NumericError(format!("assembled M asymmetric by {asym:.3e}")));
    }

    let mut j = DMatrix::<f64>::zeros(horizon * nu, nx);
    for (k, block) in j_blocks.iter().enumerate() {
        j.view_mut((k * nu, 0), (nu, nx)).copy_from(block);
    }

    let schur = prob.input_weight_schur();
    let (lambda_min_bound, _) = sym_eig_range(&schur);
    let (_, r_max) = sym_eig_range(r);
    let b_norm = spectral_norm(b)?;
    let q_norm = spectral_norm(prob.q().data())?;
    let s_norm = spectral_norm(s)?;
    let denom = 1.0 - (-2.0 * cert.rho).exp();
    let lambda_max_bound =
        r_max + 4.0 * cert.tau.powi(2) * (b_norm.powi(2) * q_norm + b_norm * s_norm) / denom.powi(2);

    Ok(DisturbanceSystem {
        horizon,
        m,
        j,
        g: g.g.clone(),
        topology: prob.topology().clone(),
        lambda_min_bound,
        lambda_max_bound,
    })
}

/// Solves `M L + J = 0` by symmetric positive-definite factorization and
/// verifies the residual to `1e-9 ||J||` (1e-12 absolute when `J = 0`).
pub fn solve_direct(ds: &DisturbanceSystem) -> Result<DisturbanceController> {
    let chol = ds
        .m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularM("M is not positive definite".into()))?;
    let l = -chol.solve(&ds.j);
    let residual = spectral_norm(&(&ds.m * &l + &ds.j))?;
    let j_norm = spectral_norm(&ds.j)?;
    let budget = if j_norm > 0.0 { 1e-9 * j_norm } else { 1e-12 };
    if residual > budget {
        return Err(Error::SingularM(format!(
            "direct solve residual {residual:.3e} exceeds budget {budget:.3e}"
        )));
    }
    DisturbanceController::from_stacked(l, ds.horizon, ds.topology.clone())
}

/// Which largest-eigenvalue estimate normalizes the Neumann series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMaxMode {
    /// The closed-form certified upper bound (mirrors the analysis).
    CertifiedBound,
    /// The computed eigenvalue (faster convergence).
    Exact,
}

fn lambda_max_for(ds: &DisturbanceSystem, mode: LambdaMaxMode) -> f64 {
    match mode {
        LambdaMaxMode::CertifiedBound => ds.lambda_max_bound,
        LambdaMaxMode::Exact => sym_eig_range(&ds.m).1,
    }
}

/// Truncated Neumann-series solve with `t` terms:
/// `L^{(t)} = -(1/lmax) sum_{s<t} (I - M/lmax)^s J`, evaluated by the
/// recursion `L <- L - (M L + J)/lmax`.
pub fn solve_neumann(ds: &DisturbanceSystem, t: usize) -> Result<DisturbanceController> {
    solve_neumann_with(ds, t, LambdaMaxMode::CertifiedBound)
}

pub fn solve_neumann_with(
    ds: &DisturbanceSystem,
    t: usize,
    mode: LambdaMaxMode,
) -> Result<DisturbanceController> {
    if t == 0 {
        return Err(Error::InvalidInput("Neumann solve needs at least one term".into()));
    }
    let lmax = lambda_max_for(ds, mode);
    let mut l = DMatrix::<f64>::zeros(ds.j.nrows(), ds.j.ncols());
    for _ in 0..t {
        let correction = (&ds.m * &l + &ds.j) / lmax;
        l -= correction;
    }
    DisturbanceController::from_stacked(l, ds.horizon, ds.topology.clone())
}

/// Certified truncation error of the `t`-term Neumann solve:
/// `(||J|| / lmin) * exp(-(lmin/lmax) t)` with the certified eigenvalue
/// bounds.
pub fn neumann_error_bound(ds: &DisturbanceSystem, t: usize) -> Result<f64> {
    let j_norm = spectral_norm(&ds.j)?;
    let lmin = ds.lambda_min_bound;
    let lmax = ds.lambda_max_bound;
    Ok(j_norm / lmin * (-(lmin / lmax) * t as f64).exp())
}

/// Average cost of the disturbance-feedback law by the block-quadratic trace
/// identity: `trace(G) + tr(L'J) + tr(J'L) + tr(L'ML)`.
pub fn disturbance_cost(
    prob: &LqrProblem,
    g: &LyapunovSum,
    ds: &DisturbanceSystem,
    l: &DisturbanceController,
) -> Result<f64> {
    if l.stacked().shape() != ds.j.shape() {
        return Err(Error::ShapeError("controller shape does not match the assembly".into()));
    }
    let _ = prob;
    let lm = l.stacked();
    let ml = &ds.m * lm;
    let mut cross = 0.0;
    let mut quad = 0.0;
    for (x, (y, z)) in lm.iter().zip(ds.j.iter().zip(ml.iter())) {
        cross += x * y;
        quad += x * z;
    }
    Ok(g.g.trace() + 2.0 * cross + quad)
}

/// Gap between the optimal state-feedback gain and `-L_1`, with its certified
/// exponential-in-`H` bound
/// `2 tau^3 (||B||^2 ||K|| ||Q|| + ||B|| ||K|| ||S||) e^{-H rho} /
///  (lmin(R - S Q^{-1} S') (1 - e^{-2 rho})^{5/2})`.
///
/// The certificate must cover both `A` and the optimal closed loop (combine
/// the two fits).
pub fn lemma3_gap(
    k_opt: &BlockMatrix,
    l: &DisturbanceController,
    prob: &LqrProblem,
    cert: &StabilityCertificate,
) -> Result<(f64, f64)> {
    let l1 = l.l_dense(1)?;
    let gap = spectral_norm(&(k_opt.data() + &l1))?;
    let b_norm = spectral_norm(prob.b().data())?;
    let q_norm = spectral_norm(prob.q().data())?;
    let s_norm = spectral_norm(prob.s().data())?;
    let k_norm = spectral_norm(k_opt.data())?;
    let (lmin, _) = sym_eig_range(&prob.input_weight_schur());
    let denom = 1.0 - (-2.0 * cert.rho).exp();
    let bound = 2.0 * cert.tau.powi(3) * (b_norm.powi(2) * k_norm * q_norm + b_norm * k_norm * s_norm)
        / (lmin * denom.powf(2.5))
        * (-(l.horizon as f64) * cert.rho).exp();
    Ok((gap, bound))
}

/// Result of the extreme-eigenvalue check on `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBoundsReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_min_bound: f64,
    pub lambda_max_bound: f64,
    pub passed: bool,
}

/// Dense symmetric eigensolve of `M` checked against both certified bounds
/// (tolerance 1e-8, matching the system invariant).
pub fn eigen_bounds_check(ds: &DisturbanceSystem) -> Result<EigenBoundsReport> {
    let (lambda_min, lambda_max) = sym_eig_range(&ds.m);
    let passed = lambda_min >= ds.lambda_min_bound - 1e-8
        && lambda_max <= ds.lambda_max_bound + 1e-8;
    Ok(EigenBoundsReport {
        lambda_min,
        lambda_max,
        lambda_min_bound: ds.lambda_min_bound,
        lambda_max_bound: ds.lambda_max_bound,
        passed,
    })
}

/// Blockwise spatial-decay report for the assembled `M` and `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct MjSedReport {
    pub c_m: f64,
    pub c_j: f64,
    pub gamma_m: f64,
    /// Worst `norm/bound` ratio over all blocks (<= 1 when the check passes).
    pub worst_ratio: f64,
    pub worst_location: Option<String>,
    pub passed: bool,
}

/// Verifies that every `M_km` agent block satisfies the `(c_M, gamma_M)`
/// envelope and every `J_k` block the `(c_J, gamma_M)` envelope, with
///
/// * `c_M = b^2 N^2 (tau^2 ||Q|| / (1 - e^{-2 rho}) + 2q) + bN(s + tau ||S||) + r`,
/// * `c_J =   b N   (tau^2 ||Q|| / (1 - e^{-2 rho}) + 2q) +    s + tau ||S||`,
/// * `gamma_M = gamma_sys * rho / (rho + ln(aN))`,
///
/// from the attached system decay constants and the fitted `(tau, rho)`.
pub fn mj_sed_check(
    ds: &DisturbanceSystem,
    prob: &LqrProblem,
    cert: &StabilityCertificate,
) -> Result<MjSedReport> {
    let consts = prob.sed_constants.as_ref().ok_or_else(|| {
        Error::InvalidInput("mj_sed_check needs attached system decay constants".into())
    })?;
    let topo = &ds.topology;
    let n = topo.agent_count() as f64;
    let q_norm = spectral_norm(prob.q().data())?;
    let s_norm = spectral_norm(prob.s().data())?;
    let r_const = consts.r;
    let denom = 1.0 - (-2.0 * cert.rho).exp();
    let g_term = cert.tau.powi(2) * q_norm / denom + 2.0 * consts.q;
    let c_m = consts.b.powi(2) * n.powi(2) * g_term
        + consts.b * n * (consts.s + cert.tau * s_norm)
        + r_const;
    let c_j = consts.b * n * g_term + consts.s + cert.tau * s_norm;
    let gamma_m = consts.gamma_sys * cert.rho / (cert.rho + (consts.a * n).ln());

    let nu_dims = topo.input_dims();
    let sx_dims = topo.state_dims();
    let nu = topo.n_u();
    let agents = topo.agent_count();
    let mut worst_ratio = 0.0f64;
    let mut worst_location = None;

    let mut check_block = |norm: f64, d: u32, bound_c: f64, loc: String| {
        let bound = bound_c * (-gamma_m * f64::from(d)).exp();
        let ratio = if bound > 0.0 { norm / bound } else if norm > 0.0 { f64::INFINITY } else { 0.0 };
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_location = Some(loc);
        }
    };

    for k in 0..ds.horizon {
        for m in 0..ds.horizon {
            let base = (k * nu, m * nu);
            for i in 0..agents {
                for jj in 0..agents {
                    let view = ds.m.view(
                        (base.0 + topo.input_offset(i), base.1 + topo.input_offset(jj)),
                        (nu_dims[i], nu_dims[jj]),
                    );
                    let norm = view_spectral_norm(&view.into_owned());
                    check_block(
                        norm,
                        topo.distance(i, jj),
                        c_m,
                        format!("M[k={},m={}] block ({i},{jj})", k + 1, m + 1),
                    );
                }
            }
        }
        for i in 0..agents {
            for jj in 0..agents {
                let view = ds.j.view(
                    (k * nu + topo.input_offset(i), topo.state_offset(jj)),
                    (nu_dims[i], sx_dims[jj]),
                );
                let norm = view_spectral_norm(&view.into_owned());
                check_block(norm, topo.distance(i, jj), c_j, format!("J[k={}] block ({i},{jj})", k + 1));
            }
        }
    }
    let passed = worst_ratio <= 1.0 + 1e-12;
    Ok(MjSedReport {
        c_m,
        c_j,
        gamma_m,
        worst_ratio,
        worst_location: if passed { None } else { worst_location },
        passed,
    })
}

fn view_spectral_norm(m: &DMatrix<f64>) -> f64 {
    crate::block::spectral_norm_unchecked(m)
}

/// One row of the horizon sweep produced by [`lemma3_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma3Row {
    pub horizon: usize,
    pub gap: f64,
    pub bound: f64,
}

/// Gain-gap sweep over `H = 1..=h_max`, solving every leading sub-system of a
/// single assembly through one incrementally extended Cholesky factorization
/// (the forward substitution grows with the factor; only the back-solve is
/// per-horizon).
pub fn lemma3_sweep(
    prob: &LqrProblem,
    g: &LyapunovSum,
    cert: &StabilityCertificate,
    k_opt: &BlockMatrix,
    h_max: usize,
) -> Result<Vec<Lemma3Row>> {
    let ds = assemble(prob, g, cert, h_max)?;
    let nu = ds.n_u();
    let nx = ds.n_x();
    let mut factor = IncrementalCholesky::new(h_max * nu);
    let mut y = DMatrix::<f64>::zeros(h_max * nu, nx);
    let mut rows = Vec::with_capacity(h_max);
    for h in 1..=h_max {
        let prev = (h - 1) * nu;
        let c = ds.m.view((0, prev), (prev, nu)).into_owned();
        let d = ds.m.view((prev, prev), (nu, nu)).into_owned();
        factor.extend(&c, &d)?;
        // Forward substitution for the new rows: y_new = D_L^{-1}(J_h - X' y_prev).
        let j_block = ds.j.view((prev, 0), (nu, nx)).into_owned();
        let rhs = if prev == 0 {
            j_block
        } else {
            &j_block - factor.off_diag(prev, nu).tr_mul(&y.view((0, 0), (prev, nx)).into_owned())
        };
        let y_new = factor
            .diag_block(prev, nu)
            .solve_lower_triangular(&rhs)
            .ok_or_else(|| Error::SingularM("incremental factor block singular".into()))?;
        y.view_mut((prev, 0), (nu, nx)).copy_from(&y_new);

        // Back substitution at this horizon.
        let lh = factor.view(h * nu);
        let x = lh
            .tr_solve_lower_triangular(&y.view((0, 0), (h * nu, nx)).into_owned())
            .ok_or_else(|| Error::SingularM("incremental back-solve failed".into()))?;
        let l_stacked = -x;
        // Spot-check the linear-system residual at the ends of the sweep.
        if h == 1 || h == h_max || h == h_max / 2 {
            let sub = ds.leading(h)?;
            let residual = spectral_norm(&(sub.m() * &l_stacked + sub.j()))?;
            let j_norm = spectral_norm(sub.j())?;
            let budget = if j_norm > 0.0 { 1e-9 * j_norm } else { 1e-12 };
            if residual > budget {
                return Err(Error::SingularM(format!(
                    "sweep residual {residual:.3e} exceeds budget at H={h}"
                )));
            }
        }
        let l = DisturbanceController::from_stacked(l_stacked, h, ds.topology.clone())?;
        let (gap, bound) = lemma3_gap(k_opt, &l, prob, cert)?;
        rows.push(Lemma3Row { horizon: h, gap, bound });
    }
    Ok(rows)
}

/// Growing Cholesky factor of a symmetric positive-definite matrix extended
/// by bordered blocks.
struct IncrementalCholesky {
    l: DMatrix<f64>,
    size: usize,
}

impl IncrementalCholesky {
    fn new(capacity: usize) -> Self {
        IncrementalCholesky { l: DMatrix::zeros(capacity, capacity), size: 0 }
    }

    /// Appends `p` rows/columns: `c` is the `size x p` coupling block, `d`
    /// the new `p x p` diagonal block.
    fn extend(&mut self, c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<()> {
        let p = d.nrows();
        let old = self.size;
        let mut schur = d.clone();
        if old > 0 {
            let x = self
                .l
                .view((0, 0), (old, old))
                .solve_lower_triangular(c)
                .ok_or_else(|| Error::SingularM("incremental factor singular".into()))?;
            self.l.view_mut((old, 0), (p, old)).copy_from(&x.transpose());
            schur -= x.tr_mul(&x);
        }
        let chol = ((&schur + schur.transpose()) * 0.5)
            .cholesky()
            .ok_or_else(|| Error::SingularM("bordered block not positive definite".into()))?;
        self.l.view_mut((old, old), (p, p)).copy_from(&chol.l());
        self.size = old + p;
        Ok(())
    }

    fn view(&self, size: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.l.view((0, 0), (size, size))
    }

    /// The `(rows 'at'..at+p) x at` off-diagonal strip, transposed relative to
    /// the coupling block it came from.
    fn off_diag(&self, at: usize, p: usize) -> DMatrix<f64> {
        self.l.view((at, 0), (p, at)).transpose()
    }

    fn diag_block(&self, at: usize, p: usize) -> DMatrix<f64> {
        self.l.view((at, at), (p, p)).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::{fit_stability, solve_dare, solve_lyapunov_g};
    use crate::systems::{heat_equation_stable_system, random_stable_sed_system, LqrProblem};
    use crate::topology::Topology;
    use approx::assert_relative_eq;

    fn scalar_problem() -> LqrProblem {
        let topo = Topology::from_edge_list(1, &[], vec![1], vec![1]).unwrap();
        LqrProblem::new(
            topo,
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap()
    }

    fn scalar_assembly(h: usize) -> (LqrProblem, LyapunovSum, StabilityCertificate, DisturbanceSystem) {
        let prob = scalar_problem();
        let cert = fit_stability(prob.a().data(), 100).unwrap();
        let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        let ds = assemble(&prob, &g, &cert, h).unwrap();
        (prob, g, cert, ds)
    }

    #[test]
    fn assemble_zero_dynamics() {
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
        let cert = fit_stability(prob.a().data(), 10).unwrap();
        let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        let ds = assemble(&prob, &g, &cert, 3).unwrap();
        assert_relative_eq!((ds.m() - DMatrix::identity(9, 9) * 2.0).amax(), 0.0);
        assert_relative_eq!(ds.j().amax(), 0.0);
        let l = solve_direct(&ds).unwrap();
        assert_relative_eq!(l.stacked().amax(), 0.0);
    }

    #[test]
    fn assemble_scalar_h2_hand_values() {
        let (_, _, _, ds) = scalar_assembly(2);
        let expected_m =
            DMatrix::from_row_slice(2, 2, &[7.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 7.0 / 3.0]);
        let expected_j = DMatrix::from_row_slice(2, 1, &[2.0 / 3.0, 1.0 / 3.0]);
        assert!((ds.m() - expected_m).amax() < 1e-12);
        assert!((ds.j() - expected_j).amax() < 1e-12);

        let l = solve_direct(&ds).unwrap();
        assert_relative_eq!(l.l_dense(1).unwrap()[(0, 0)], -4.0 / 15.0, epsilon = 1e-12);
        assert_relative_eq!(l.l_dense(2).unwrap()[(0, 0)], -1.0 / 15.0, epsilon = 1e-12);
    }

    #[test]
    fn assembled_m_is_symmetric_on_random_systems() {
        for seed in 0..8 {
            let prob = random_stable_sed_system(seed);
            let cert = fit_stability(prob.a().data(), 100).unwrap();
            let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
            let ds = assemble(&prob, &g, &cert, 4).unwrap();
            assert_eq!((ds.m() - ds.m().transpose()).amax(), 0.0);
        }
    }

    #[test]
    fn direct_solve_residual_on_heat_variant() {
        let prob =
            heat_equation_stable_system(10, 0.1, 0.1, &[1.0; 10], &[1.0; 10], &[1.0; 10]).unwrap();
        let cert = fit_stability(prob.a().data(), 200).unwrap();
        let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        let ds = assemble(&prob, &g, &cert, 20).unwrap();
        let l = solve_direct(&ds).unwrap();
        let residual = spectral_norm(&(ds.m() * l.stacked() + ds.j())).unwrap();
        assert!(residual <= 1e-9 * spectral_norm(ds.j()).unwrap());
    }

    #[test]
    fn neumann_t1_and_convergence() {
        let (_, _, _, ds) = scalar_assembly(2);
        let l1 = solve_neumann(&ds, 1).unwrap();
        let expected = -ds.j() / ds.lambda_max_bound;
        assert!((l1.stacked() - expected).amax() < 1e-15);

        let direct = solve_direct(&ds).unwrap();
        let l500 = solve_neumann(&ds, 500).unwrap();
        assert!((l500.stacked() - direct.stacked()).amax() < 1e-8);

        // Error is monotone nonincreasing in t and below the certified bound.
        let mut prev = f64::INFINITY;
        let mut l = DMatrix::<f64>::zeros(ds.j().nrows(), ds.j().ncols());
        for t in 1..=200 {
            let corr = (ds.m() * &l + ds.j()) / ds.lambda_max_bound;
            l -= corr;
            let err = spectral_norm(&(&l - direct.stacked())).unwrap();
            assert!(err <= prev * (1.0 + 1e-12), "t={t}");
            assert!(err <= neumann_error_bound(&ds, t).unwrap() + 1e-15, "t={t}");
            prev = err;
        }
    }

    #[test]
    fn cost_trace_formula() {
        let (prob, g, _, ds) = scalar_assembly(2);
        let zero = DisturbanceController::from_stacked(
            DMatrix::zeros(2, 1),
            2,
            prob.topology().clone(),
        )
        .unwrap();
        assert_relative_eq!(
            disturbance_cost(&prob, &g, &ds, &zero).unwrap(),
            4.0 / 3.0,
            epsilon = 1e-12
        );

        // At the optimum: trace(G) - J' M^{-1} J = 4/3 - 1/5 = 17/15.
        let l = solve_direct(&ds).unwrap();
        assert_relative_eq!(
            disturbance_cost(&prob, &g, &ds, &l).unwrap(),
            17.0 / 15.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cost_converges_to_riccati_cost_in_h() {
        let (prob, g, cert, _) = scalar_assembly(1);
        let sol = solve_dare(&prob).unwrap();
        let mut prev = f64::INFINITY;
        let mut last = f64::INFINITY;
        for h in 1..=20 {
            let ds = assemble(&prob, &g, &cert, h).unwrap();
            let l = solve_direct(&ds).unwrap();
            let c = disturbance_cost(&prob, &g, &ds, &l).unwrap();
            assert!(c <= prev + 1e-12, "cost must be nonincreasing in H");
            prev = c;
            last = c;
        }
        assert_relative_eq!(last, sol.p.trace(), epsilon = 1e-6);
    }

    #[test]
    fn lemma3_on_scalar() {
        let (prob, g, cert, ds) = scalar_assembly(2);
        let sol = solve_dare(&prob).unwrap();
        let cl_cert = fit_stability(&(prob.a().data() - prob.b().data() * sol.k.data()), 100).unwrap();
        let joint = cert.combine(&cl_cert);
        let l = solve_direct(&ds).unwrap();
        let (gap, bound) = lemma3_gap(&sol.k, &l, &prob, &joint).unwrap();
        assert_relative_eq!(gap, (0.2655644370746374f64 - 4.0 / 15.0).abs(), epsilon = 1e-9);
        assert!(gap <= bound, "gap {gap} > bound {bound}");
    }

    #[test]
    fn lemma3_sweep_matches_per_horizon_solves() {
        let prob =
            heat_equation_stable_system(10, 0.1, 0.1, &[1.0; 10], &[1.0; 10], &[1.0; 10]).unwrap();
        let cert = fit_stability(prob.a().data(), 200).unwrap();
        let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        let sol = solve_dare(&prob).unwrap();
        let cl_cert = fit_stability(&(prob.a().data() - prob.b().data() * sol.k.data()), 200).unwrap();
        let joint = cert.combine(&cl_cert);
        let rows = lemma3_sweep(&prob, &g, &joint, &sol.k, 8).unwrap();
        assert_eq!(rows.len(), 8);
        for row in &rows {
            let ds = assemble(&prob, &g, &joint, row.horizon).unwrap();
            let l = solve_direct(&ds).unwrap();
            let (gap, bound) = lemma3_gap(&sol.k, &l, &prob, &joint).unwrap();
            assert_relative_eq!(row.gap, gap, max_relative = 1e-9);
            assert_relative_eq!(row.bound, bound, max_relative = 1e-12);
            assert!(row.gap <= row.bound);
        }
    }

    #[test]
    fn eigen_bounds_scalar_and_zero_dynamics() {
        let (_, _, _, ds) = scalar_assembly(2);
        let report = eigen_bounds_check(&ds).unwrap();
        assert_relative_eq!(report.lambda_min, 5.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(report.lambda_max, 3.0, epsilon = 1e-10);
        assert!(report.passed);
        assert!(report.lambda_min_bound <= 1.0 + 1e-12);
    }

    #[test]
    fn eigen_bounds_on_random_systems() {
        for seed in 0..10 {
            let prob = random_stable_sed_system(seed);
            let cert = fit_stability(prob.a().data(), 200).unwrap();
            let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
            let h = 1 + (seed as usize % 6);
            let ds = assemble(&prob, &g, &cert, h).unwrap();
            let report = eigen_bounds_check(&ds).unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn mj_sed_check_heat_variant_and_mutation() {
        let prob =
            heat_equation_stable_system(10, 0.1, 0.1, &[1.0; 10], &[1.0; 10], &[1.0; 10]).unwrap();
        let cert = fit_stability(prob.a().data(), 200).unwrap();
        let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        let mut ds = assemble(&prob, &g, &cert, 5).unwrap();
        let report = mj_sed_check(&ds, &prob, &cert).unwrap();
        assert!(report.passed, "{report:?}");

        // Corrupting one far block past the certified constant must be caught
        // and located.
        let nu = ds.n_u();
        let far = ds.topology().distance(0, 5);
        assert!(far >= 4);
        let poison = 2.0 * report.c_m;
        ds.m[(nu, 3 * nu + 5)] = poison;
        ds.m[(3 * nu + 5, nu)] = poison;
        let report = mj_sed_check(&ds, &prob, &cert).unwrap();
        assert!(!report.passed);
        let loc = report.worst_location.unwrap();
        assert!(loc.contains("(0,5)") || loc.contains("(5,0)"), "{loc}");
    }

    #[test]
    fn leading_subsystem_matches_fresh_assembly() {
        let prob = random_stable_sed_system(4);
        let cert = fit_stability(prob.a().data(), 100).unwrap();
        let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        let big = assemble(&prob, &g, &cert, 6).unwrap();
        let small = assemble(&prob, &g, &cert, 2).unwrap();
        let lead = big.leading(2).unwrap();
        assert!((lead.m() - small.m()).amax() < 1e-15);
        assert!((lead.j() - small.j()).amax() < 1e-15);
    }
}
