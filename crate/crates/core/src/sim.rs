//! Monte-Carlo rollout engine cross-validating the closed-form costs.
//!
//! Rollouts integrate `x_{t+1} = A x_t + B u_t + w_t` from `x_0` (zero unless
//! configured) with `w_t` i.i.d. standard normal from the documented
//! per-trial streams (see [`crate::rng`]), time-average the stage cost over
//! `[burn_in, T)` and report mean and standard error across trials.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::disturbance::DisturbanceController;
use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use crate::systems::LqrProblem;

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    /// Time steps per trial.
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Steps discarded before cost accumulation starts.
    pub burn_in: usize,
    /// Disables the process noise (`w = 0`), for deterministic-decay checks.
    pub zero_noise: bool,
    /// Initial state; zero when absent.
    pub x0: Option<DVector<f64>>,
}

impl RolloutConfig {
    pub fn new(horizon: usize, trials: usize, seed: u64, burn_in: usize) -> Result<Self> {
        let cfg = RolloutConfig { horizon, trials, seed, burn_in, zero_noise: false, x0: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon <= self.burn_in {
            return Err(Error::InvalidInput(format!(
                "horizon {} must exceed burn-in {}",
                self.horizon, self.burn_in
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("at least one trial required".into()));
        }
        Ok(())
    }
}

/// Mean and standard error of the time-averaged cost across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStats {
    pub mean: f64,
    pub stderr: f64,
    pub per_trial: Vec<f64>,
}

fn stats_from(per_trial: Vec<f64>) -> RolloutStats {
    let n = per_trial.len() as f64;
    let mean = per_trial.iter().sum::<f64>() / n;
    let stderr = if per_trial.len() > 1 {
        let var = per_trial.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    RolloutStats { mean, stderr, per_trial }
}

const DIVERGENCE_LIMIT_SQ: f64 = 1e18;

struct StageCost<'a> {
    q: &'a DMatrix<f64>,
    r: &'a DMatrix<f64>,
    s: &'a DMatrix<f64>,
    qx: DVector<f64>,
    ru: DVector<f64>,
    sx: DVector<f64>,
}

impl<'a> StageCost<'a> {
    fn new(prob: &'a LqrProblem) -> Self {
        StageCost {
            q: prob.q().data(),
            r: prob.r().data(),
            s: prob.s().data(),
            qx: DVector::zeros(prob.n_x()),
            ru: DVector::zeros(prob.n_u()),
            sx: DVector::zeros(prob.n_u()),
        }
    }

    /// `x'Qx + u'Ru + 2u'Sx`.
    fn eval(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.q.mul_to(x, &mut self.qx);
        self.r.mul_to(u, &mut self.ru);
        self.s.mul_to(x, &mut self.sx);
        x.dot(&self.qx) + u.dot(&self.ru) + 2.0 * u.dot(&self.sx)
    }
}

fn single_state_feedback_trial(
    prob: &LqrProblem,
    kp: &DMatrix<f64>,
    cfg: &RolloutConfig,
    trial: u64,
) -> Result<f64> {
    let a = prob.a().data();
    let b = prob.b().data();
    let nx = prob.n_x();
    let nu = prob.n_u();
    let mut stream = NoiseStream::for_trial(cfg.seed, trial);
    let mut x = cfg.x0.clone().unwrap_or_else(|| DVector::zeros(nx));
    let mut u = DVector::zeros(nu);
    let mut ax = DVector::zeros(nx);
    let mut bu = DVector::zeros(nx);
    let mut w = DVector::zeros(nx);
    let mut cost = StageCost::new(prob);
    let mut acc = 0.0;
    for t in 0..cfg.horizon {
        kp.mul_to(&x, &mut u);
        u.neg_mut();
        let stage = cost.eval(&x, &u);
        if t >= cfg.burn_in {
            acc += stage;
        }
        if cfg.zero_noise {
            w.fill(0.0);
        } else {
            stream.fill_normal(&mut w);
        }
        a.mul_to(&x, &mut ax);
        b.mul_to(&u, &mut bu);
        ax += &bu;
        ax += &w;
        std::mem::swap(&mut x, &mut ax);
        if x.norm_squared() > DIVERGENCE_LIMIT_SQ {
            return Err(Error::DivergenceDetected(format!(
                "state norm exceeded 1e9 at step {t} (trial {trial})"
            )));
        }
    }
    Ok(acc / (cfg.horizon - cfg.burn_in) as f64)
}

/// Time-averaged empirical cost of `u = -Kp x`.
pub fn rollout_state_feedback(
    prob: &LqrProblem,
    kp: &DMatrix<f64>,
    cfg: &RolloutConfig,
) -> Result<RolloutStats> {
    cfg.validate()?;
    let per_trial: Vec<f64> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| single_state_feedback_trial(prob, kp, cfg, trial))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats_from(per_trial))
}

fn single_disturbance_trial(
    prob: &LqrProblem,
    l_blocks: &[DMatrix<f64>],
    cfg: &RolloutConfig,
    trial: u64,
) -> Result<f64> {
    let a = prob.a().data();
    let b = prob.b().data();
    let nx = prob.n_x();
    let nu = prob.n_u();
    let h = l_blocks.len();
    let mut stream = NoiseStream::for_trial(cfg.seed, trial);
    let mut x = cfg.x0.clone().unwrap_or_else(|| DVector::zeros(nx));
    let mut u = DVector::zeros(nu);
    let mut ax = DVector::zeros(nx);
    let mut bu = DVector::zeros(nx);
    let mut w = DVector::zeros(nx);
    // Ring buffer of the last H disturbances; w_s = 0 for s < 0.
    let mut hist: Vec<DVector<f64>> = (0..h).map(|_| DVector::zeros(nx)).collect();
    let mut cost = StageCost::new(prob);
    let mut acc = 0.0;
    for t in 0..cfg.horizon {
        u.fill(0.0);
        for k in 1..=h {
            if t >= k {
                u.gemv(1.0, &l_blocks[k - 1], &hist[(t - k) % h], 1.0);
            }
        }
        let stage = cost.eval(&x, &u);
        if t >= cfg.burn_in {
            acc += stage;
        }
        if cfg.zero_noise {
            w.fill(0.0);
        } else {
            stream.fill_normal(&mut w);
        }
        a.mul_to(&x, &mut ax);
        b.mul_to(&u, &mut bu);
        ax += &bu;
        ax += &w;
        std::mem::swap(&mut x, &mut ax);
        hist[t % h].copy_from(&w);
        if x.norm_squared() > DIVERGENCE_LIMIT_SQ {
            return Err(Error::DivergenceDetected(format!(
                "state norm exceeded 1e9 at step {t} (trial {trial})"
            )));
        }
    }
    Ok(acc / (cfg.horizon - cfg.burn_in) as f64)
}

/// Time-averaged empirical cost of the disturbance-feedback law
/// `u_t = L_1 w_{t-1} + ... + L_H w_{t-H}` (past noises only; needs an
/// open-loop-stable plant for boundedness).
pub fn rollout_disturbance_feedback(
    prob: &LqrProblem,
    l: &DisturbanceController,
    cfg: &RolloutConfig,
) -> Result<RolloutStats> {
    cfg.validate()?;
    let l_blocks: Vec<DMatrix<f64>> =
        (1..=l.horizon).map(|k| l.l_dense(k)).collect::<Result<Vec<_>>>()?;
    let per_trial: Vec<f64> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| single_disturbance_trial(prob, &l_blocks, cfg, trial))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats_from(per_trial))
}

/// Steady-state covariance comparison: empirical time/trial average of
/// `x x'` against the analytic `sum_k T_k T_k'` built from the closed-loop
/// impulse response
/// `T_k = A^{k-1} + sum_{j=1}^{min(k-1,H)} A^{k-1-j} B L_j`
/// (tail summed exactly via doubling).
#[derive(Debug, Clone)]
pub struct SecondMomentReport {
    pub analytic: DMatrix<f64>,
    pub empirical: DMatrix<f64>,
    pub max_abs_dev: f64,
    /// Max deviation in units of the per-entry standard error.
    pub max_standardized_dev: f64,
    /// Mean and standard error of the covariance trace across trials (a
    /// single well-behaved statistic for acceptance gating).
    pub trace_mean: f64,
    pub trace_stderr: f64,
}

pub fn second_moment_check(
    prob: &LqrProblem,
    l: &DisturbanceController,
    cfg: &RolloutConfig,
) -> Result<SecondMomentReport> {
    cfg.validate()?;
    let analytic = analytic_state_covariance(prob, l)?;
    let nx = prob.n_x();
    let l_blocks: Vec<DMatrix<f64>> =
        (1..=l.horizon).map(|k| l.l_dense(k)).collect::<Result<Vec<_>>>()?;

    let per_trial: Vec<DMatrix<f64>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<DMatrix<f64>> {
            let a = prob.a().data();
            let b = prob.b().data();
            let nu = prob.n_u();
            let h = l_blocks.len();
            let mut stream = NoiseStream::for_trial(cfg.seed, trial);
            let mut x = DVector::<f64>::zeros(nx);
            let mut u = DVector::zeros(nu);
            let mut ax = DVector::zeros(nx);
            let mut bu = DVector::zeros(nx);
            let mut w = DVector::zeros(nx);
            let mut hist: Vec<DVector<f64>> = (0..h).map(|_| DVector::zeros(nx)).collect();
            let mut cov = DMatrix::<f64>::zeros(nx, nx);
            for t in 0..cfg.horizon {
                u.fill(0.0);
                for k in 1..=h {
                    if t >= k {
                        u.gemv(1.0, &l_blocks[k - 1], &hist[(t - k) % h], 1.0);
                    }
                }
                if t >= cfg.burn_in {
                    cov.syger(1.0, &x, &x, 1.0);
                }
                stream.fill_normal(&mut w);
                a.mul_to(&x, &mut ax);
                b.mul_to(&u, &mut bu);
                ax += &bu;
                ax += &w;
                std::mem::swap(&mut x, &mut ax);
                hist[t % h].copy_from(&w);
                if x.norm_squared() > DIVERGENCE_LIMIT_SQ {
                    return Err(Error::DivergenceDetected(format!(
                        "state norm exceeded 1e9 at step {t} (trial {trial})"
                    )));
                }
            }
            cov /= (cfg.horizon - cfg.burn_in) as f64;
            // syger only touched the lower triangle.
            cov.fill_upper_triangle_with_lower_triangle();
            Ok(cov)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = per_trial.len() as f64;
    let mut mean = DMatrix::<f64>::zeros(nx, nx);
    for c in &per_trial {
        mean += c;
    }
    mean /= n;
    let mut max_abs = 0.0f64;
    let mut max_std = 0.0f64;
    for i in 0..nx {
        for j in 0..nx {
            let dev = (mean[(i, j)] - analytic[(i, j)]).abs();
            max_abs = max_abs.max(dev);
            if per_trial.len() > 1 {
                let var = per_trial
                    .iter()
                    .map(|c| (c[(i, j)] - mean[(i, j)]).powi(2))
                    .sum::<f64>()
                    / (n - 1.0);
                let se = (var / n).sqrt().max(1e-12);
                max_std = max_std.max(dev / se);
            }
        }
    }
    let traces: Vec<f64> = per_trial.iter().map(|c| c.trace()).collect();
    let trace_stats = stats_from(traces);
    Ok(SecondMomentReport {
        analytic,
        empirical: mean,
        max_abs_dev: max_abs,
        max_standardized_dev: max_std,
        trace_mean: trace_stats.mean,
        trace_stderr: trace_stats.stderr,
    })
}

/// Closed-form steady-state covariance of the disturbance-feedback loop.
pub fn analytic_state_covariance(
    prob: &LqrProblem,
    l: &DisturbanceController,
) -> Result<DMatrix<f64>> {
    let a = prob.a().data();
    let b = prob.b().data();
    let nx = prob.n_x();
    let h = l.horizon;
    // bl[j] = B L_{j+1}
    let bl: Vec<DMatrix<f64>> =
        (1..=h).map(|k| Ok(b * l.l_dense(k)?)).collect::<Result<Vec<_>>>()?;
    // T_k for k = 1..=H+1 by the recursion T_{k+1} = A T_k + B L_k (+ the
    // direct feedthrough of the newest noise).
    let mut t_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(h + 1);
    t_blocks.push(DMatrix::identity(nx, nx));
    for k in 2..=h + 1 {
        // T_k = A T_{k-1} + B L_{k-1}
        let prev = &t_blocks[k - 2];
        let mut tk = a * prev;
        tk += &bl[k - 2];
        t_blocks.push(tk);
    }
    let mut sigma = DMatrix::<f64>::zeros(nx, nx);
    for tk in t_blocks.iter().take(h) {
        sigma += tk * tk.transpose();
    }
    // Tail: sum_{m>=0} A^m T_{H+1} T_{H+1}' (A^m)'.
    let w = &t_blocks[h] * t_blocks[h].transpose();
    let (tail, _) = crate::riccati::lyapunov_sum_doubling(&a.transpose(), &w)?;
    sigma += tail;
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disturbance::{assemble, disturbance_cost, solve_direct};
    use crate::riccati::{fit_stability, solve_dare, solve_lyapunov_g};
    use crate::topology::Topology;
    use approx::assert_relative_eq;

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

    fn zero_problem(n: usize) -> LqrProblem {
        let topo = Topology::build_cycle(n, 1, 1).unwrap();
        LqrProblem::new(
            topo,
            DMatrix::zeros(n, n),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::zeros(n, n),
        )
        .unwrap()
    }

    #[test]
    fn state_feedback_zero_dynamics() {
        // x_{t+1} = w_t, Kp = 0: average cost = E||w||^2 = n_x.
        let prob = zero_problem(4);
        let cfg = RolloutConfig::new(60_000, 6, 11, 100).unwrap();
        let stats = rollout_state_feedback(&prob, &DMatrix::zeros(4, 4), &cfg).unwrap();
        assert!((stats.mean - 4.0).abs() <= 3.0 * stats.stderr, "{stats:?}");
    }

    #[test]
    fn state_feedback_scalar_optimal() {
        let prob = scalar_problem(0.5);
        let sol = solve_dare(&prob).unwrap();
        let cfg = RolloutConfig::new(200_000, 8, 5, 200).unwrap();
        let stats = rollout_state_feedback(&prob, sol.k.data(), &cfg).unwrap();
        assert!(
            (stats.mean - sol.p.trace()).abs() <= 3.0 * stats.stderr,
            "empirical {} vs trace(P) {} (se {})",
            stats.mean,
            sol.p.trace(),
            stats.stderr
        );
    }

    #[test]
    fn zero_noise_decays() {
        let prob = scalar_problem(0.5);
        let sol = solve_dare(&prob).unwrap();
        let mut cfg = RolloutConfig::new(10_000, 1, 0, 0).unwrap();
        cfg.zero_noise = true;
        cfg.x0 = Some(DVector::from_element(1, 1.0));
        let stats = rollout_state_feedback(&prob, sol.k.data(), &cfg).unwrap();
        assert!(stats.mean < 1e-3, "deterministic decay should vanish, got {}", stats.mean);
    }

    #[test]
    fn divergence_detected() {
        let prob = scalar_problem(1.5);
        let cfg = RolloutConfig::new(10_000, 1, 0, 0).unwrap();
        assert!(matches!(
            rollout_state_feedback(&prob, &DMatrix::zeros(1, 1), &cfg),
            Err(Error::DivergenceDetected(_))
        ));
    }

    #[test]
    fn disturbance_feedback_matches_trace_formulas() {
        let prob = scalar_problem(0.5);
        let cert = fit_stability(prob.a().data(), 100).unwrap();
        let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        let ds = assemble(&prob, &g, &cert, 2).unwrap();
        let cfg = RolloutConfig::new(120_000, 8, 17, 200).unwrap();

        // L = 0: empirical ~= trace(G) = 4/3.
        let zero =
            DisturbanceController::from_stacked(DMatrix::zeros(2, 1), 2, prob.topology().clone())
                .unwrap();
        let stats = rollout_disturbance_feedback(&prob, &zero, &cfg).unwrap();
        assert!((stats.mean - 4.0 / 3.0).abs() <= 3.0 * stats.stderr, "{stats:?}");

        // Optimal L: empirical ~= 17/15.
        let l = solve_direct(&ds).unwrap();
        let c = disturbance_cost(&prob, &g, &ds, &l).unwrap();
        let stats = rollout_disturbance_feedback(&prob, &l, &cfg).unwrap();
        assert!((stats.mean - c).abs() <= 3.0 * stats.stderr, "{stats:?} vs {c}");
    }

    #[test]
    fn disturbance_feedback_zero_dynamics_h1() {
        // A = 0, arbitrary L1: C = trace(Q) + trace(L1'(B'QB + R)L1).
        let prob = zero_problem(3);
        let l1 = DMatrix::from_fn(3, 3, |i, j| 0.1 * (i as f64 - j as f64));
        let l = DisturbanceController::from_stacked(l1.clone(), 1, prob.topology().clone()).unwrap();
        let m = prob.b().data().tr_mul(&(prob.q().data() * prob.b().data())) + prob.r().data();
        let analytic = prob.q().data().trace() + (l1.tr_mul(&(&m * &l1))).trace();
        let cfg = RolloutConfig::new(80_000, 8, 3, 100).unwrap();
        let stats = rollout_disturbance_feedback(&prob, &l, &cfg).unwrap();
        assert!((stats.mean - analytic).abs() <= 3.0 * stats.stderr, "{stats:?} vs {analytic}");
    }

    #[test]
    fn second_moment_zero_dynamics() {
        let prob = zero_problem(3);
        let l = DisturbanceController::from_stacked(
            DMatrix::zeros(3, 3),
            1,
            prob.topology().clone(),
        )
        .unwrap();
        let analytic = analytic_state_covariance(&prob, &l).unwrap();
        assert_relative_eq!((analytic - DMatrix::identity(3, 3)).norm(), 0.0, epsilon = 1e-12);

        let cfg = RolloutConfig::new(40_000, 6, 9, 100).unwrap();
        let report = second_moment_check(&prob, &l, &cfg).unwrap();
        assert!(report.max_standardized_dev <= 4.0, "{}", report.max_standardized_dev);
    }

    #[test]
    fn second_moment_scalar_geometric() {
        // a = 0.5, L1 = -0.2: T_1 = 1, T_k = 0.3 * 0.5^{k-2} for k >= 2,
        // so sigma = 1 + 0.09 / (1 - 0.25) = 1.12.
        let prob = scalar_problem(0.5);
        let l = DisturbanceController::from_stacked(
            DMatrix::from_element(1, 1, -0.2),
            1,
            prob.topology().clone(),
        )
        .unwrap();
        let analytic = analytic_state_covariance(&prob, &l).unwrap();
        assert_relative_eq!(analytic[(0, 0)], 1.12, epsilon = 1e-12);

        let cfg = RolloutConfig::new(120_000, 8, 21, 200).unwrap();
        let report = second_moment_check(&prob, &l, &cfg).unwrap();
        assert!(report.max_standardized_dev <= 4.0, "{}", report.max_standardized_dev);
    }

    #[test]
    fn l0_covariance_is_controllability_gramian() {
        let prob = scalar_problem(0.5);
        let l = DisturbanceController::from_stacked(
            DMatrix::zeros(1, 1),
            1,
            prob.topology().clone(),
        )
        .unwrap();
        // sum a^{2m} = 1/(1-0.25).
        let analytic = analytic_state_covariance(&prob, &l).unwrap();
        assert_relative_eq!(analytic[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let prob = zero_problem(3);
        let cfg = RolloutConfig::new(5_000, 4, 123, 10).unwrap();
        let s1 = rollout_state_feedback(&prob, &DMatrix::zeros(3, 3), &cfg).unwrap();
        let s2 = rollout_state_feedback(&prob, &DMatrix::zeros(3, 3), &cfg).unwrap();
        assert_eq!(s1.per_trial, s2.per_trial);
        assert_eq!(s1.mean.to_bits(), s2.mean.to_bits());
    }

    #[test]
    fn config_validation() {
        assert!(RolloutConfig::new(10, 1, 0, 10).is_err());
        assert!(RolloutConfig::new(10, 0, 0, 0).is_err());
    }
}
