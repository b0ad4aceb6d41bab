//! Concrete LQR instances: heat equation on a cycle, the non-decaying
//! counter-example family, thermal-grid and swing-dynamics case studies, plus
//! the exact continuous-time discretization scheme they go through.
//!
//! All randomness (thermal capacitances, synthetic grid susceptances, the
//! random test systems) is driven by an explicit seed through the
//! [`crate::rng`] stream, so identical seeds reproduce identical systems
//! bit-for-bit.

use nalgebra::DMatrix;

use crate::block::{
    envelope_constant_at, spectral_norm, BlockMatrix, GAMMA_CAP, PROFILE_FLOOR,
};
use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use crate::topology::Topology;

/// Spatial-decay constants of the five problem matrices at a common rate
/// `gamma_sys`, with `a, b, q, r` clamped at 1 (they enter logarithms and
/// products in the derived bounds).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SedSystemConstants {
    pub gamma_sys: f64,
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

/// Discrete-time network LQR instance: dynamics `x+ = A x + B u + w`, stage
/// cost `x'Qx + u'Ru + 2u'Sx`, with all five matrices block-partitioned over
/// a shared [`Topology`]. State feedback is applied as `u = -K x` throughout.
#[derive(Debug, Clone)]
pub struct LqrProblem {
    topology: Topology,
    a: BlockMatrix,
    b: BlockMatrix,
    q: BlockMatrix,
    r: BlockMatrix,
    s: BlockMatrix,
    pub warnings: Vec<String>,
    pub sed_constants: Option<SedSystemConstants>,
}

/// Symmetric positive-definiteness with a small eigenvalue tolerance: the
/// Cholesky factorization is attempted first, then the minimum eigenvalue is
/// allowed down to `-1e-10 * max(1, ||X||)`.
fn check_spd(x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.nrows() != x.ncols() {
        return Err(Error::InvalidProblem(format!("{what} must be square")));
    }
    let scale = x.amax().max(1.0);
    let asym = (x - x.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::InvalidProblem(format!("{what} is not symmetric (skew part {asym:.3e})")));
    }
    let sym = (x + x.transpose()) * 0.5;
    if sym.clone().cholesky().is_some() {
        return Ok(());
    }
    let (min, _) = crate::block::sym_eig_range(&sym);
    if min >= -1e-10 * scale {
        Ok(())
    } else {
        Err(Error::InvalidProblem(format!("{what} is not positive definite (lambda_min = {min:.3e})")))
    }
}

impl LqrProblem {
    /// Builds and validates an instance. The cost matrices must satisfy
    /// `Q > 0` and `R - S Q^{-1} S' > 0`.
    pub fn new(
        topology: Topology,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        s: DMatrix<f64>,
    ) -> Result<Self> {
        let nx = topology.n_x();
        let nu = topology.n_u();
        let shapes = [
            ("A", a.shape(), (nx, nx)),
            ("B", b.shape(), (nx, nu)),
            ("Q", q.shape(), (nx, nx)),
            ("R", r.shape(), (nu, nu)),
            ("S", s.shape(), (nu, nx)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::ShapeError(format!("{name} has shape {got:?}, expected {want:?}")));
            }
        }
        check_spd(&q, "Q")?;
        let q_chol = ((&q + q.transpose()) * 0.5)
            .cholesky()
            .ok_or_else(|| Error::InvalidProblem("Q is singular".into()))?;
        let schur = &r - &s * q_chol.solve(&s.transpose());
        check_spd(&schur, "R - S Q^{-1} S'")?;

        let a = BlockMatrix::state_state(a, &topology)?;
        let b = BlockMatrix::state_input(b, &topology)?;
        let q = BlockMatrix::state_state(q, &topology)?;
        let r = BlockMatrix::input_input(r, &topology)?;
        let s = BlockMatrix::input_state(s, &topology)?;
        Ok(LqrProblem { topology, a, b, q, r, s, warnings: Vec::new(), sed_constants: None })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn a(&self) -> &BlockMatrix {
        &self.a
    }
    pub fn b(&self) -> &BlockMatrix {
        &self.b
    }
    pub fn q(&self) -> &BlockMatrix {
        &self.q
    }
    pub fn r(&self) -> &BlockMatrix {
        &self.r
    }
    pub fn s(&self) -> &BlockMatrix {
        &self.s
    }

    pub fn n_x(&self) -> usize {
        self.topology.n_x()
    }
    pub fn n_u(&self) -> usize {
        self.topology.n_u()
    }

    /// `R - S Q^{-1} S'`, the effective input weight after eliminating the
    /// cross term.
    pub fn input_weight_schur(&self) -> DMatrix<f64> {
        let q = self.q.data();
        let q_chol = ((q + q.transpose()) * 0.5).cholesky().expect("validated at construction");
        self.r.data() - self.s.data() * q_chol.solve(&self.s.data().transpose())
    }

    /// Fits envelope constants for all five matrices at the prescribed common
    /// rate and stores them (with `a, b, q, r` clamped at 1).
    pub fn attach_sed_constants(&mut self, gamma_sys: f64) -> Result<()> {
        let t = &self.topology;
        let consts = SedSystemConstants {
            gamma_sys,
            a: envelope_constant_at(&self.a, t, gamma_sys)?.max(1.0),
            b: envelope_constant_at(&self.b, t, gamma_sys)?.max(1.0),
            q: envelope_constant_at(&self.q, t, gamma_sys)?.max(1.0),
            r: envelope_constant_at(&self.r, t, gamma_sys)?.max(1.0),
            s: envelope_constant_at(&self.s, t, gamma_sys)?,
        };
        self.sed_constants = Some(consts);
        Ok(())
    }

    /// Replaces `A` by `factor * A`, keeping everything else. Used to produce
    /// open-loop-stable variants of marginally stable instances.
    pub fn with_scaled_a(mut self, factor: f64) -> Self {
        let topo = self.topology.clone();
        let scaled = self.a.data() * factor;
        self.a = BlockMatrix::state_state(scaled, &topo).expect("shape unchanged");
        self
    }
}

/// Continuous-time LQR data with nearest-neighbor support: `[A_c]_ij` and
/// `[B_c]_ij` vanish beyond hop distance 1.
#[derive(Debug, Clone)]
pub struct ContinuousSystem {
    pub topology: Topology,
    pub a_c: DMatrix<f64>,
    pub b_c: DMatrix<f64>,
    pub q_c: DMatrix<f64>,
    pub r_c: DMatrix<f64>,
}

impl ContinuousSystem {
    pub fn new(
        topology: Topology,
        a_c: DMatrix<f64>,
        b_c: DMatrix<f64>,
        q_c: DMatrix<f64>,
        r_c: DMatrix<f64>,
    ) -> Result<Self> {
        let sys = ContinuousSystem { topology, a_c, b_c, q_c, r_c };
        sys.check_support()?;
        Ok(sys)
    }

    fn check_support(&self) -> Result<()> {
        let a = BlockMatrix::state_state(self.a_c.clone(), &self.topology)?;
        let b = BlockMatrix::state_input(self.b_c.clone(), &self.topology)?;
        let n = self.topology.agent_count();
        for i in 0..n {
            for j in 0..n {
                if self.topology.distance(i, j) > 1
                    && (a.block_norm(i, j) > PROFILE_FLOOR || b.block_norm(i, j) > PROFILE_FLOOR)
                {
                    return Err(Error::InvalidProblem(format!(
                        "continuous dynamics have support beyond distance 1 at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A continuous system together with its discretization.
#[derive(Debug, Clone)]
pub struct DiscretizedLqr {
    pub continuous: ContinuousSystem,
    pub dt: f64,
    pub problem: LqrProblem,
}

/// `exp(t A)` by scaling-and-squaring over a truncated Taylor series. The
/// scaled series is summed until a term falls below 1e-16 of the running sum.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::ShapeError("matrix exponential needs a square matrix".into()));
    }
    if a.iter().any(|x| !x.is_finite()) || !t.is_finite() {
        return Err(Error::NumericError("non-finite input to matrix_exponential".into()));
    }
    let n = a.nrows();
    let at = a * t;
    let norm = at.norm();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let x = &at / f64::powi(2.0, squarings as i32);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=120 {
        term = (&term * &x) / k as f64;
        sum += &term;
        if term.norm() <= 1e-16 * sum.norm() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(sum)
}

/// `int_0^dt exp(s A) ds`, the input-averaging factor of the exact
/// discretization. Computed like the exponential: scaled truncated series
/// (`dt * sum_k (dt A)^k / (k+1)!`) followed by interval doubling via
/// `Phi(2h) = Phi(h) + exp(hA) Phi(h)`.
pub fn phi_integral(a: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::ShapeError("phi_integral needs a square matrix".into()));
    }
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("phi_integral needs dt > 0, got {dt}")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericError("non-finite input to phi_integral".into()));
    }
    let n = a.nrows();
    let norm = (a * dt).norm();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let h = dt / f64::powi(2.0, squarings as i32);
    let x = a * h;
    // phi = h * sum_k x^k / (k+1)!
    let mut term = DMatrix::<f64>::identity(n, n) * h;
    let mut phi = term.clone();
    for k in 1..=120 {
        term = (&term * &x) / (k + 1) as f64;
        phi += &term;
        if term.norm() <= 1e-16 * phi.norm() {
            break;
        }
    }
    if squarings > 0 {
        let mut e = matrix_exponential(a, h)?;
        for _ in 0..squarings {
            phi = &phi + &e * &phi;
            e = &e * &e;
        }
    }
    Ok(phi)
}

/// Exact discretization `A = exp(dt A_c)`, `B = (int_0^dt exp(s A_c) ds) B_c`,
/// `Q = dt Q_c`, `R = dt R_c`, `S = 0`. Attaches spatial-decay constants at
/// the rate `-ln(dt ||A_c||)` whenever `dt ||A_c|| < 1`.
pub fn discretize(sys: &ContinuousSystem, dt: f64) -> Result<LqrProblem> {
    if dt <= 0.0 {
        return Err(Error::InvalidInput(format!("discretize needs dt > 0, got {dt}")));
    }
    let a = matrix_exponential(&sys.a_c, dt)?;
    let b = phi_integral(&sys.a_c, dt)? * &sys.b_c;
    let q = &sys.q_c * dt;
    let r = &sys.r_c * dt;
    let nu = sys.topology.n_u();
    let nx = sys.topology.n_x();
    let s = DMatrix::zeros(nu, nx);
    let mut prob = LqrProblem::new(sys.topology.clone(), a, b, q, r, s)?;
    let ac_norm = spectral_norm(&sys.a_c)?;
    let x = dt * ac_norm;
    if x > 0.0 && x < 1.0 {
        prob.attach_sed_constants(-x.ln().min(GAMMA_CAP).max(-GAMMA_CAP))?;
    } else if x == 0.0 {
        prob.attach_sed_constants(GAMMA_CAP)?;
    } else {
        prob.warnings.push(format!(
            "dt*||A_c|| = {x:.4} >= 1: discretization decay certificate unavailable"
        ));
    }
    Ok(prob)
}

/// Outcome of the discretization decay check.
#[derive(Debug, Clone, PartialEq)]
pub enum Prop5Outcome {
    Passed,
    /// `dt ||A_c|| >= 1`: the claimed rate is non-positive, nothing to check.
    Skipped(String),
    Failed(String),
}

impl Prop5Outcome {
    pub fn passed(&self) -> bool {
        matches!(self, Prop5Outcome::Passed)
    }
}

/// Verifies the discretization decay bounds blockwise: with
/// `x = dt ||A_c|| < 1` and rate `gamma = -ln x`,
/// `A` must be `(e^x, gamma)`-SED and `B` must be
/// `(||B_c|| e^x / ||A_c||, gamma)`-SED.
///
/// The `B` constant follows the series argument (blocks of `(A_c)^k B_c`
/// vanish below order `dist - 1`), which at distance `d` gives
/// `dt^d ||A_c||^(d-1) ||B_c|| e^x`.
pub fn prop5_check(sys: &ContinuousSystem, dt: f64, prob: &LqrProblem) -> Result<Prop5Outcome> {
    let ac_norm = spectral_norm(&sys.a_c)?;
    let bc_norm = spectral_norm(&sys.b_c)?;
    let topo = &sys.topology;
    let n = topo.agent_count();
    let x = dt * ac_norm;
    if x == 0.0 {
        // Zero dynamics: A = I and B = dt * B_c inherit the sparsity pattern,
        // so all far blocks must vanish outright.
        for i in 0..n {
            for j in 0..n {
                if topo.distance(i, j) > 1
                    && (prob.a().block_norm(i, j) > PROFILE_FLOOR
                        || prob.b().block_norm(i, j) > PROFILE_FLOOR)
                {
                    return Ok(Prop5Outcome::Failed(format!(
                        "zero dynamics left a nonzero far block at ({i},{j})"
                    )));
                }
            }
        }
        return Ok(Prop5Outcome::Passed);
    }
    if x >= 1.0 {
        return Ok(Prop5Outcome::Skipped(format!(
            "dt*||A_c|| = {x:.4} >= 1, claimed decay rate non-positive"
        )));
    }
    let c_a = x.exp();
    let c_b = bc_norm * x.exp() / ac_norm;
    for i in 0..n {
        for j in 0..n {
            let d = f64::from(topo.distance(i, j));
            let decay = x.powf(d);
            let bound_a = c_a * decay;
            let na = prob.a().block_norm(i, j);
            if na > bound_a * (1.0 + 1e-12) {
                return Ok(Prop5Outcome::Failed(format!(
                    "A block ({i},{j}): norm {na:.6e} exceeds bound {bound_a:.6e}"
                )));
            }
            let bound_b = c_b * decay;
            let nb = prob.b().block_norm(i, j);
            if nb > bound_b * (1.0 + 1e-12) {
                return Ok(Prop5Outcome::Failed(format!(
                    "B block ({i},{j}): norm {nb:.6e} exceeds bound {bound_b:.6e}"
                )));
            }
        }
    }
    Ok(Prop5Outcome::Passed)
}

fn diag(entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(entries))
}

/// Heat equation on the cycle `Z_N`:
/// `x+_i = x_i + eta(-2 x_i + x_{i+1} + x_{i-1} + b_i u_i)`, i.e.
/// `A = I - eta L`, `B = eta diag(b)`, `Q = diag(q)`, `R = diag(r)`, `S = 0`.
///
/// `eta` outside `(0, 1/4]` is permitted but flagged (A stops being positive
/// semi-definite past 1/4).
pub fn heat_equation_system(
    n: usize,
    eta: f64,
    b_coeffs: &[f64],
    q_coeffs: &[f64],
    r_coeffs: &[f64],
) -> Result<LqrProblem> {
    let topo = Topology::build_cycle(n, 1, 1)?;
    if b_coeffs.len() != n || q_coeffs.len() != n || r_coeffs.len() != n {
        return Err(Error::InvalidInput("coefficient lists must have length N".into()));
    }
    let mut a = DMatrix::<f64>::identity(n, n) * (1.0 - 2.0 * eta);
    for i in 0..n {
        a[(i, (i + 1) % n)] = eta;
        a[((i + 1) % n, i)] = eta;
    }
    let b: Vec<f64> = b_coeffs.iter().map(|&bi| eta * bi).collect();
    let mut prob = LqrProblem::new(topo, a, diag(&b), diag(q_coeffs), diag(r_coeffs), DMatrix::zeros(n, n))?;
    if !(0.0..=0.25).contains(&eta) {
        prob.warnings.push(format!("eta = {eta} outside (0, 1/4]: A may be indefinite"));
    }
    let gamma_sys = if eta > 0.0 { (1.0 / eta).ln().min(GAMMA_CAP) } else { GAMMA_CAP };
    prob.attach_sed_constants(gamma_sys)?;
    Ok(prob)
}

/// Open-loop-stable heat-equation variant: `A` scaled by `exp(-rho)`.
pub fn heat_equation_stable_system(
    n: usize,
    eta: f64,
    rho: f64,
    b_coeffs: &[f64],
    q_coeffs: &[f64],
    r_coeffs: &[f64],
) -> Result<LqrProblem> {
    let prob = heat_equation_system(n, eta, b_coeffs, q_coeffs, r_coeffs)?;
    let gamma_sys = prob.sed_constants.map_or(1.0, |c| c.gamma_sys);
    let mut prob = prob.with_scaled_a((-rho).exp());
    prob.attach_sed_constants(gamma_sys)?;
    Ok(prob)
}

/// The non-decaying family: `A = a I`, `B` upper-bidiagonal with ones on the
/// diagonal and superdiagonal, `Q = R = I`, `S = 0`, distances on the
/// cycle `Z_N`. With `a = 1.1` this is the counter-example whose optimal gain
/// is not spatially decaying; with `a = exp(-rho)` it is the stable toy
/// family.
pub fn counterexample_system(n: usize, a_scalar: f64) -> Result<LqrProblem> {
    if n < 2 {
        return Err(Error::InvalidTopology(format!("counterexample needs N >= 2, got {n}")));
    }
    let topo = if n == 2 {
        Topology::from_edge_list(2, &[(0, 1)], vec![1; 2], vec![1; 2])?
    } else {
        Topology::build_cycle(n, 1, 1)?
    };
    let a = DMatrix::<f64>::identity(n, n) * a_scalar;
    let mut b = DMatrix::<f64>::identity(n, n);
    for i in 0..n - 1 {
        b[(i, i + 1)] = 1.0;
    }
    let mut prob = LqrProblem::new(
        topo,
        a,
        b,
        DMatrix::identity(n, n),
        DMatrix::identity(n, n),
        DMatrix::zeros(n, n),
    )?;
    prob.attach_sed_constants(1.0)?;
    Ok(prob)
}

/// Thermal zone dynamics on a `rows x cols` grid:
/// `v_i x'_i = sum_{j ~ i} (x_j - x_i)/zeta + u_i`, cost weights
/// `Q_c = alpha I`, `R_c = I`, discretized exactly with step `dt`.
///
/// Capacitances default to `200 + 20 N(0,1)` drawn from the seeded stream;
/// non-positive draws are clamped to 100 and flagged.
#[allow(clippy::too_many_arguments)]
pub fn thermal_grid_system(
    rows: usize,
    cols: usize,
    capacitances: Option<Vec<f64>>,
    zeta: f64,
    alpha: f64,
    dt: f64,
    seed: u64,
) -> Result<DiscretizedLqr> {
    if zeta <= 0.0 || alpha <= 0.0 || dt <= 0.0 {
        return Err(Error::InvalidInput(
            "thermal grid needs positive zeta, alpha and dt".into(),
        ));
    }
    let topo = Topology::build_grid(rows, cols, 1, 1)?;
    let n = topo.agent_count();
    let mut warnings = Vec::new();
    let v = match capacitances {
        Some(v) => {
            if v.len() != n {
                return Err(Error::InvalidInput("capacitance list must have length N".into()));
            }
            if v.iter().any(|&x| x <= 0.0) {
                return Err(Error::InvalidInput("capacitances must be positive".into()));
            }
            v
        }
        None => {
            let mut stream = NoiseStream::new(seed, 0);
            (0..n)
                .map(|i| {
                    let sample = 200.0 + 20.0 * stream.next_normal();
                    if sample <= 0.0 {
                        warnings.push(format!("capacitance {i} sampled non-positive; clamped to 100"));
                        100.0
                    } else {
                        sample
                    }
                })
                .collect()
        }
    };
    let mut a_c = DMatrix::<f64>::zeros(n, n);
    for (i, j) in topo.edges() {
        a_c[(i, j)] = 1.0 / (v[i] * zeta);
        a_c[(j, i)] = 1.0 / (v[j] * zeta);
        a_c[(i, i)] -= 1.0 / (v[i] * zeta);
        a_c[(j, j)] -= 1.0 / (v[j] * zeta);
    }
    let b_c = diag(&v.iter().map(|&vi| 1.0 / vi).collect::<Vec<_>>());
    let q_c = DMatrix::identity(n, n) * alpha;
    let r_c = DMatrix::identity(n, n);
    let continuous = ContinuousSystem::new(topo, a_c, b_c, q_c, r_c)?;
    let mut problem = discretize(&continuous, dt)?;
    problem.warnings.extend(warnings);
    Ok(DiscretizedLqr { continuous, dt, problem })
}

/// Linearized swing dynamics on a bus network: per-bus state `(theta, omega)`
/// with `theta' = omega`, `omega'_i = -sum_j k_ij (theta_j - theta_i) + b u_i`
/// and coupling `k_ij = l_ij V_ref^2 / M` from the line susceptances `l_ij`.
/// Cost weights `Q_c = diag(alpha1, alpha2)` per bus, `R_c = I`.
#[allow(clippy::too_many_arguments)]
pub fn swing_dynamics_system(
    n_buses: usize,
    lines: &[(usize, usize, f64)],
    v_ref: f64,
    inertia: f64,
    b_gain: f64,
    alpha1: f64,
    alpha2: f64,
    dt: f64,
) -> Result<DiscretizedLqr> {
    if lines.iter().any(|&(_, _, l)| l <= 0.0) {
        return Err(Error::InvalidInput("line susceptances must be positive".into()));
    }
    if inertia <= 0.0 || dt <= 0.0 {
        return Err(Error::InvalidInput("swing system needs positive inertia and dt".into()));
    }
    let unweighted: Vec<(usize, usize)> = lines.iter().map(|&(i, j, _)| (i, j)).collect();
    let topo = Topology::from_edge_list(n_buses, &unweighted, vec![2; n_buses], vec![1; n_buses])?;
    if !topo.is_connected() {
        return Err(Error::InvalidTopology("swing dynamics need a connected bus network".into()));
    }
    let nx = 2 * n_buses;
    let mut a_c = DMatrix::<f64>::zeros(nx, nx);
    for i in 0..n_buses {
        a_c[(2 * i, 2 * i + 1)] = 1.0;
    }
    for &(i, j, l) in lines {
        let k = l * v_ref * v_ref / inertia;
        a_c[(2 * i + 1, 2 * j)] -= k;
        a_c[(2 * i + 1, 2 * i)] += k;
        a_c[(2 * j + 1, 2 * i)] -= k;
        a_c[(2 * j + 1, 2 * j)] += k;
    }
    let mut b_c = DMatrix::<f64>::zeros(nx, n_buses);
    for i in 0..n_buses {
        b_c[(2 * i + 1, i)] = b_gain;
    }
    let mut q_diag = Vec::with_capacity(nx);
    for _ in 0..n_buses {
        q_diag.push(alpha1);
        q_diag.push(alpha2);
    }
    let q_c = diag(&q_diag);
    let r_c = DMatrix::identity(n_buses, n_buses);
    let continuous = ContinuousSystem::new(topo, a_c, b_c, q_c, r_c)?;
    let problem = discretize(&continuous, dt)?;
    Ok(DiscretizedLqr { continuous, dt, problem })
}

/// Seeded random geometric graph standing in for a 145-bus network: nodes on
/// the unit square joined within radius 0.13, then connected deterministically
/// by bridging nearest component pairs. Susceptances are log-uniform around
/// 1e-6.
pub fn synthetic_bus_network(n: usize, seed: u64) -> Vec<(usize, usize, f64)> {
    let mut stream = NoiseStream::new(seed, 1);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (stream.next_uniform(), stream.next_uniform())).collect();
    let radius = 0.13;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = pts[i].0 - pts[j].0;
            let dy = pts[i].1 - pts[j].1;
            if (dx * dx + dy * dy).sqrt() <= radius {
                edges.push((i, j));
            }
        }
    }
    // Bridge components until connected: join the globally nearest pair of
    // nodes living in different components (ties broken by index order).
    loop {
        let mut comp = vec![usize::MAX; n];
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut n_comp = 0;
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = n_comp;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = n_comp;
                        stack.push(w);
                    }
                }
            }
            n_comp += 1;
        }
        if n_comp == 1 {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                if comp[i] == comp[j] {
                    continue;
                }
                let dx = pts[i].0 - pts[j].0;
                let dy = pts[i].1 - pts[j].1;
                let dist = (dx * dx + dy * dy).sqrt();
                if best.map_or(true, |(bd, _, _)| dist < bd) {
                    best = Some((dist, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("more than one component implies a bridging pair");
        edges.push((i, j));
    }
    edges
        .into_iter()
        .map(|(i, j)| {
            let u = 2.0 * stream.next_uniform() - 1.0;
            (i, j, 1e-6 * u.exp())
        })
        .collect()
}

/// Seeded random open-loop-stable SED instance on a small cycle or grid,
/// with nearest-neighbor support, occasionally heterogeneous block sizes and
/// an occasional nonzero cross term. Used by property and acceptance tests.
pub fn random_stable_sed_system(seed: u64) -> LqrProblem {
    let mut rng = NoiseStream::new(seed, 7);
    let mut pick = |lo: usize, hi: usize| -> usize {
        lo + ((hi - lo + 1) as f64 * rng.next_uniform()) as usize % (hi - lo + 1)
    };
    let shape = pick(0, 2);
    let topo = match shape {
        0 => Topology::build_cycle(pick(4, 20), 1, 1).unwrap(),
        1 => Topology::build_grid(pick(2, 4), pick(2, 4), 1, 1).unwrap(),
        _ => {
            // Cycle with heterogeneous per-agent dimensions.
            let n = pick(4, 9);
            let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            let sd: Vec<usize> = (0..n).map(|_| pick(1, 2)).collect();
            let id: Vec<usize> = (0..n).map(|_| 1).collect();
            Topology::from_edge_list(n, &edges, sd, id).unwrap()
        }
    };
    let n = topo.agent_count();
    let nx = topo.n_x();
    let nu = topo.n_u();
    let mut rng = NoiseStream::new(seed, 8);

    let mut a = DMatrix::<f64>::zeros(nx, nx);
    for i in 0..n {
        for j in 0..n {
            if topo.distance(i, j) <= 1 {
                for r in 0..topo.state_dims()[i] {
                    for c in 0..topo.state_dims()[j] {
                        a[(topo.state_offset(i) + r, topo.state_offset(j) + c)] =
                            rng.next_uniform() - 0.5;
                    }
                }
            }
        }
    }
    let target = 0.3 + 0.6 * rng.next_uniform();
    let rho_a = crate::riccati::spectral_radius(&a);
    if rho_a > 0.0 {
        a *= target / rho_a;
    }

    let mut b = DMatrix::<f64>::zeros(nx, nu);
    for i in 0..n {
        for r in 0..topo.state_dims()[i] {
            for c in 0..topo.input_dims()[i] {
                b[(topo.state_offset(i) + r, topo.input_offset(i) + c)] =
                    0.5 + rng.next_uniform();
            }
        }
    }

    let q = diag(&(0..nx).map(|_| 0.5 + 1.5 * rng.next_uniform()).collect::<Vec<_>>());
    let r = diag(&(0..nu).map(|_| 0.5 + 1.5 * rng.next_uniform()).collect::<Vec<_>>());

    let mut s = DMatrix::<f64>::zeros(nu, nx);
    if rng.next_uniform() < 0.5 {
        for i in 0..n {
            for j in 0..n {
                if topo.distance(i, j) <= 1 {
                    for rr in 0..topo.input_dims()[i] {
                        for cc in 0..topo.state_dims()[j] {
                            s[(topo.input_offset(i) + rr, topo.state_offset(j) + cc)] =
                                0.05 * (rng.next_uniform() - 0.5);
                        }
                    }
                }
            }
        }
    }
    let mut prob = LqrProblem::new(topo, a, b, q, r, s).expect("generator keeps Assumption 1");
    prob.attach_sed_constants(1.0).unwrap();
    prob
}
