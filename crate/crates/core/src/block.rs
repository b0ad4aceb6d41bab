//! Block-partitioned dense matrices, spectral norms, per-distance block-norm
//! profiles and spatial-decay certificates.
//!
//! A matrix `X` is `(c, gamma)`-SED (spatially exponential decaying) when
//! every agent block satisfies `||[X]_ij|| <= c * exp(-gamma * dist(i,j))`.
//! [`fit_sed`] measures such certificates empirically, in two modes: an
//! *envelope* fit (a true upper bound, zero violations) used inside theorem
//! checks, and a least-squares *regression* fit used for trend comparison.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::Topology;

/// Reported decay rates are capped here; support-limited matrices (far blocks
/// exactly zero) would otherwise fit an infinite rate.
pub const GAMMA_CAP: f64 = 50.0;

/// Profile entries at or below this floor are treated as numerical zeros.
pub const PROFILE_FLOOR: f64 = 1e-14;

/// Dense real matrix together with row/column block partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    data: DMatrix<f64>,
    row_partition: Vec<usize>,
    col_partition: Vec<usize>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    for &d in dims {
        out.push(acc);
        acc += d;
    }
    out.push(acc);
    out
}

impl BlockMatrix {
    pub fn new(data: DMatrix<f64>, row_partition: Vec<usize>, col_partition: Vec<usize>) -> Result<Self> {
        let row_offsets = offsets(&row_partition);
        let col_offsets = offsets(&col_partition);
        if *row_offsets.last().unwrap() != data.nrows() || *col_offsets.last().unwrap() != data.ncols() {
            return Err(Error::ShapeError(format!(
                "partition sums ({}, {}) do not match matrix shape ({}, {})",
                row_offsets.last().unwrap(),
                col_offsets.last().unwrap(),
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(BlockMatrix { data, row_partition, col_partition, row_offsets, col_offsets })
    }

    /// State-by-state partition (e.g. `A`, `Q`, `P`).
    pub fn state_state(data: DMatrix<f64>, topo: &Topology) -> Result<Self> {
        Self::new(data, topo.state_dims().to_vec(), topo.state_dims().to_vec())
    }

    /// State-by-input partition (e.g. `B`).
    pub fn state_input(data: DMatrix<f64>, topo: &Topology) -> Result<Self> {
        Self::new(data, topo.state_dims().to_vec(), topo.input_dims().to_vec())
    }

    /// Input-by-state partition (e.g. `S`, gains `K` and `L_k`).
    pub fn input_state(data: DMatrix<f64>, topo: &Topology) -> Result<Self> {
        Self::new(data, topo.input_dims().to_vec(), topo.state_dims().to_vec())
    }

    /// Input-by-input partition (e.g. `R`).
    pub fn input_input(data: DMatrix<f64>, topo: &Topology) -> Result<Self> {
        Self::new(data, topo.input_dims().to_vec(), topo.input_dims().to_vec())
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn row_partition(&self) -> &[usize] {
        &self.row_partition
    }

    pub fn col_partition(&self) -> &[usize] {
        &self.col_partition
    }

    /// Number of row/column blocks (equal to the agent count for partitions
    /// derived from a topology).
    pub fn block_rows(&self) -> usize {
        self.row_partition.len()
    }

    pub fn block_cols(&self) -> usize {
        self.col_partition.len()
    }

    /// The `(i, j)` sub-block, sized `row_partition[i] x col_partition[j]`.
    pub fn block(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        if i >= self.block_rows() || j >= self.block_cols() {
            return Err(Error::InvalidIndex(format!(
                "block ({i},{j}) out of range for {}x{} blocks",
                self.block_rows(),
                self.block_cols()
            )));
        }
        Ok(self
            .data
            .view(
                (self.row_offsets[i], self.col_offsets[j]),
                (self.row_partition[i], self.col_partition[j]),
            )
            .into_owned())
    }

    /// Spectral norm of the `(i, j)` sub-block without materializing it.
    pub fn block_norm(&self, i: usize, j: usize) -> f64 {
        let view = self.data.view(
            (self.row_offsets[i], self.col_offsets[j]),
            (self.row_partition[i], self.col_partition[j]),
        );
        let (r, c) = view.shape();
        if r == 1 && c == 1 {
            return view[(0, 0)].abs();
        }
        if r == 1 || c == 1 {
            return view.norm();
        }
        spectral_norm_unchecked(&view.into_owned())
    }

    /// Zeroes the `(i, j)` sub-block in place.
    pub fn zero_block(&mut self, i: usize, j: usize) {
        let mut view = self.data.view_mut(
            (self.row_offsets[i], self.col_offsets[j]),
            (self.row_partition[i], self.col_partition[j]),
        );
        view.fill(0.0);
    }

    /// Checks that row/column partitions match the topology's input/state
    /// dimension lists in the given roles.
    pub fn partitions_match(&self, rows: &[usize], cols: &[usize]) -> bool {
        self.row_partition == rows && self.col_partition == cols
    }
}

/// Largest singular value.
///
/// Small matrices use a full SVD; large ones fall back to a deterministic
/// power iteration on the Gram operator with relative tolerance 1e-12.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericError("non-finite entries in spectral_norm".into()));
    }
    Ok(spectral_norm_unchecked(m))
}

const SVD_DIRECT_LIMIT: usize = 512;

pub(crate) fn spectral_norm_unchecked(m: &DMatrix<f64>) -> f64 {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    if r == 1 && c == 1 {
        return m[(0, 0)].abs();
    }
    if r == 1 || c == 1 {
        return m.norm();
    }
    if r.min(c) <= SVD_DIRECT_LIMIT {
        // Bounded sweep count: the unbounded SVD iteration can stall on
        // degenerate inputs.
        if let Some(svd) = m.clone().try_svd(false, false, 1e-14, 200_000) {
            return svd.singular_values.iter().fold(0.0f64, |acc, &s| acc.max(s));
        }
    }
    gram_power_iteration(m)
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
///
/// Bounded tridiagonal-QL first; if that stalls, a deterministic fallback
/// reads both ends off shifted positive-semidefinite power iterations
/// (`lambda_min = c - sigma_max(cI - M)` etc. with `c = sigma_max(M)`).
pub(crate) fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(se) = nalgebra::SymmetricEigen::try_new(sym.clone(), 1e-13, 200_000) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &l in se.eigenvalues.iter() {
            lo = lo.min(l);
            hi = hi.max(l);
        }
        return (lo, hi);
    }
    let n = sym.nrows();
    let c = gram_power_iteration(&sym);
    let shift_minus = DMatrix::<f64>::identity(n, n) * c - &sym;
    let shift_plus = DMatrix::<f64>::identity(n, n) * c + &sym;
    (c - gram_power_iteration(&shift_minus), gram_power_iteration(&shift_plus) - c)
}

/// Power iteration on `X^T X` (or `X X^T`, whichever is smaller), started from
/// the normalized all-ones vector. Deterministic; accurate to ~1e-12 relative
/// for the matrices this crate produces.
fn gram_power_iteration(m: &DMatrix<f64>) -> f64 {
    let tall = m.nrows() >= m.ncols();
    let dim = if tall { m.ncols() } else { m.nrows() };
    let mut v = nalgebra::DVector::<f64>::from_element(dim, 1.0 / (dim as f64).sqrt());
    let mut sigma = 0.0f64;
    for _ in 0..20_000 {
        let w = if tall { m.tr_mul(&(m * &v)) } else { m * (m.tr_mul(&v)) };
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        let done = (next - sigma).abs() <= 1e-12 * next.max(1e-300);
        sigma = next;
        v = w / norm;
        if done {
            break;
        }
    }
    sigma
}

/// How a spatial-decay certificate was fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    /// Largest rate with zero violations (a true upper bound).
    Envelope,
    /// Least squares on the log profile; violations possible.
    Regression,
}

impl std::fmt::Display for FitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitMode::Envelope => write!(f, "envelope"),
            FitMode::Regression => write!(f, "regression"),
        }
    }
}

/// Fitted `(c, gamma)` spatial-decay envelope with its measured violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SedCertificate {
    pub c: f64,
    pub gamma: f64,
    /// Largest relative excess of any block norm over `c * exp(-gamma d)`;
    /// exactly zero for envelope fits.
    pub max_violation: f64,
    pub mode: FitMode,
    /// Set when all blocks beyond distance zero vanish, so the fitted rate hit
    /// [`GAMMA_CAP`].
    pub support_limited: bool,
    /// Set for the all-zero matrix (`c = 0`).
    pub degenerate: bool,
}

impl SedCertificate {
    /// Bound value `c * exp(-gamma d)` at hop distance `d`.
    pub fn bound_at(&self, d: u32) -> f64 {
        self.c * (-self.gamma * f64::from(d)).exp()
    }

    /// Weakens the certificate to a smaller rate (the bound only grows, so
    /// validity is preserved). Used to bring two certificates to a common rate
    /// before product checks.
    pub fn weaken_to(&self, gamma: f64) -> Result<SedCertificate> {
        if gamma > self.gamma {
            return Err(Error::InvalidInput(format!(
                "cannot strengthen certificate from gamma={} to gamma={gamma}",
                self.gamma
            )));
        }
        Ok(SedCertificate { gamma, ..self.clone() })
    }

    /// CSV row in the schema `name,c,gamma,max_violation,mode`.
    pub fn csv_row(&self, name: &str) -> String {
        let mode = if self.degenerate {
            "degenerate".to_string()
        } else if self.support_limited {
            format!("{}(support-limited)", self.mode)
        } else {
            self.mode.to_string()
        };
        format!("{name},{},{},{},{mode}", self.c, self.gamma, self.max_violation)
    }
}

fn check_partitions(x: &BlockMatrix, topo: &Topology) -> Result<()> {
    let sd = topo.state_dims();
    let id = topo.input_dims();
    let row_ok = x.row_partition() == sd || x.row_partition() == id;
    let col_ok = x.col_partition() == sd || x.col_partition() == id;
    if x.block_rows() != topo.agent_count() || x.block_cols() != topo.agent_count() || !row_ok || !col_ok {
        return Err(Error::ShapeError(
            "block partitions do not match the topology's state/input dimensions".into(),
        ));
    }
    Ok(())
}

/// Max block norm per realized hop distance, sorted ascending by distance.
///
/// One entry per distance that occurs in the topology; the max over pairs is
/// taken in row-major order (associative, so the parallel reduction is
/// deterministic).
pub fn block_norm_profile(x: &BlockMatrix, topo: &Topology) -> Result<Vec<(u32, f64)>> {
    check_partitions(x, topo)?;
    if !topo.is_connected() {
        return Err(Error::InvalidTopology(
            "block_norm_profile requires a connected topology".into(),
        ));
    }
    let n = topo.agent_count();
    let diam = topo.diameter().unwrap() as usize;
    let per_row: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0f64; diam + 1];
            for j in 0..n {
                let d = topo.distance(i, j) as usize;
                let nrm = x.block_norm(i, j);
                if nrm > acc[d] {
                    acc[d] = nrm;
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0f64; diam + 1];
    for row in per_row {
        for (d, v) in row.into_iter().enumerate() {
            if v > acc[d] {
                acc[d] = v;
            }
        }
    }
    Ok(acc.into_iter().enumerate().map(|(d, v)| (d as u32, v)).collect())
}

/// Fits a `(c, gamma)` certificate against the topology's distances.
///
/// Envelope mode: `c` is the distance-zero max block norm and `gamma` the
/// largest rate with zero violations, located by bisection to 1e-6. Should the
/// profile peak away from distance zero, `c` is inflated to the global max so
/// a valid certificate always exists (then `gamma = 0`).
///
/// Regression mode: least squares of `log` profile vs distance over entries
/// above [`PROFILE_FLOOR`]; `max_violation` may be positive.
pub fn fit_sed(x: &BlockMatrix, topo: &Topology, mode: FitMode) -> Result<SedCertificate> {
    let profile = block_norm_profile(x, topo)?;
    let global_max = profile.iter().fold(0.0f64, |a, &(_, v)| a.max(v));
    if global_max <= PROFILE_FLOOR {
        return Ok(SedCertificate {
            c: 0.0,
            gamma: GAMMA_CAP,
            max_violation: 0.0,
            mode,
            support_limited: true,
            degenerate: true,
        });
    }
    match mode {
        FitMode::Envelope => Ok(fit_envelope(&profile, global_max)),
        FitMode::Regression => Ok(fit_regression(&profile)),
    }
}

fn violation(profile: &[(u32, f64)], c: f64, gamma: f64) -> f64 {
    let mut worst = 0.0f64;
    for &(d, v) in profile {
        if v <= 0.0 {
            continue;
        }
        let bound = c * (-gamma * f64::from(d)).exp();
        if v > bound {
            let excess = if bound > 0.0 { v / bound - 1.0 } else { f64::INFINITY };
            worst = worst.max(excess);
        }
    }
    worst
}

fn fit_envelope(profile: &[(u32, f64)], global_max: f64) -> SedCertificate {
    let c0 = profile[0].1;
    let support_limited = profile.iter().all(|&(d, v)| d == 0 || v <= PROFILE_FLOOR);
    if support_limited {
        return SedCertificate {
            c: c0,
            gamma: GAMMA_CAP,
            max_violation: 0.0,
            mode: FitMode::Envelope,
            support_limited: true,
            degenerate: false,
        };
    }
    let (c, mut lo) = if violation(profile, c0, 0.0) > 0.0 {
        // Profile peaks away from distance zero; fall back to the global max
        // so gamma = 0 is always feasible.
        (global_max, 0.0)
    } else {
        (c0, 0.0)
    };
    let mut hi = GAMMA_CAP;
    if violation(profile, c, hi) == 0.0 {
        lo = hi;
    } else {
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if violation(profile, c, mid) == 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    SedCertificate {
        c,
        gamma: lo,
        max_violation: violation(profile, c, lo),
        mode: FitMode::Envelope,
        support_limited: false,
        degenerate: false,
    }
}

fn fit_regression(profile: &[(u32, f64)]) -> SedCertificate {
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .filter(|&&(_, v)| v > PROFILE_FLOOR)
        .map(|&(d, v)| (f64::from(d), v.ln()))
        .collect();
    if pts.len() < 2 {
        // Single usable distance: degenerate regression, report a flat fit.
        let c = pts.first().map_or(0.0, |&(_, ly)| ly.exp());
        return SedCertificate {
            c,
            gamma: 0.0,
            max_violation: violation(profile, c, 0.0),
            mode: FitMode::Regression,
            support_limited: true,
            degenerate: false,
        };
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let gamma = (-slope).clamp(0.0, GAMMA_CAP);
    let c = intercept.exp();
    SedCertificate {
        c,
        gamma,
        max_violation: violation(profile, c, gamma),
        mode: FitMode::Regression,
        support_limited: false,
        degenerate: false,
    }
}

/// Tightest constant making `x` `(c, gamma)`-SED at a prescribed rate:
/// `max_ij ||[X]_ij|| * exp(gamma * dist(i,j))`.
pub fn envelope_constant_at(x: &BlockMatrix, topo: &Topology, gamma: f64) -> Result<f64> {
    let profile = block_norm_profile(x, topo)?;
    Ok(profile
        .iter()
        .fold(0.0f64, |acc, &(d, v)| acc.max(v * (gamma * f64::from(d)).exp())))
}

/// Checks the product preservation bound: with `X` `(x, gamma)`-SED and `Y`
/// `(y, gamma)`-SED, every block of `XY` must satisfy
/// `||[XY]_ij|| <= N * x * y * exp(-gamma * dist(i,j))`.
pub fn sed_product_check(
    x: &BlockMatrix,
    y: &BlockMatrix,
    cert_x: &SedCertificate,
    cert_y: &SedCertificate,
    topo: &Topology,
) -> Result<bool> {
    if cert_x.gamma != cert_y.gamma {
        return Err(Error::InvalidInput(format!(
            "certificates must share gamma (got {} and {}); weaken to the smaller rate first",
            cert_x.gamma, cert_y.gamma
        )));
    }
    if x.col_partition() != y.row_partition() {
        return Err(Error::ShapeError("inner partitions of X and Y do not match".into()));
    }
    let product = BlockMatrix::new(
        x.data() * y.data(),
        x.row_partition().to_vec(),
        y.col_partition().to_vec(),
    )?;
    check_partitions(&product, topo)?;
    let n = topo.agent_count() as f64;
    let scale = n * cert_x.c * cert_y.c;
    let gamma = cert_x.gamma;
    for i in 0..product.block_rows() {
        for j in 0..product.block_cols() {
            let bound = scale * (-gamma * f64::from(topo.distance(i, j))).exp();
            if product.block_norm(i, j) > bound * (1.0 + 1e-12) + 1e-300 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Block-row norm bound on the largest eigenvalue:
/// `max_k sum_m ||X_km||`, an upper bound on `lambda_max(X)` for symmetric `X`.
pub fn lambda_max_block_bound(x: &BlockMatrix) -> Result<f64> {
    if x.row_partition() != x.col_partition() {
        return Err(Error::ShapeError("lambda_max_block_bound needs a square partition".into()));
    }
    let mut best = 0.0f64;
    for k in 0..x.block_rows() {
        let mut row_sum = 0.0;
        for m in 0..x.block_cols() {
            row_sum += x.block_norm(k, m);
        }
        best = best.max(row_sum);
    }
    Ok(best)
}
