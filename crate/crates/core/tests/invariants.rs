//! Cross-module invariants: the decay-preservation properties as property
//! tests over random matrices, and the qualitative decay trends of the
//! optimal disturbance response.

use nalgebra::DMatrix;
use proptest::prelude::*;

use sedlqr::block::{
    block_norm_profile, fit_sed, lambda_max_block_bound, sed_product_check, spectral_norm,
    BlockMatrix, FitMode,
};
use sedlqr::disturbance::{assemble, solve_direct};
use sedlqr::riccati::{fit_stability, solve_lyapunov_g};
use sedlqr::systems::{counterexample_system, random_stable_sed_system};
use sedlqr::topology::Topology;

fn cycle_matrix(n: usize, entries: &[f64]) -> (BlockMatrix, Topology) {
    let topo = Topology::build_cycle(n, 1, 1).unwrap();
    let data = DMatrix::from_fn(n, n, |i, j| entries[i * n + j]);
    (BlockMatrix::state_state(data, &topo).unwrap(), topo)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 40,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    /// Reassembling all blocks reproduces the matrix bit-for-bit.
    #[test]
    fn block_roundtrip_is_bit_exact(
        rows in proptest::collection::vec(1usize..4, 1..5),
        cols in proptest::collection::vec(1usize..4, 1..5),
        seed in 0u64..1000,
    ) {
        let nr: usize = rows.iter().sum();
        let nc: usize = cols.iter().sum();
        let mut rng = sedlqr::rng::NoiseStream::new(seed, 3);
        let data = DMatrix::from_fn(nr, nc, |_, _| rng.next_normal());
        let bm = BlockMatrix::new(data.clone(), rows.clone(), cols.clone()).unwrap();
        let mut rebuilt = DMatrix::zeros(nr, nc);
        let mut r0 = 0;
        for (i, &rp) in rows.iter().enumerate() {
            let mut c0 = 0;
            for (j, &cp) in cols.iter().enumerate() {
                rebuilt.view_mut((r0, c0), (rp, cp)).copy_from(&bm.block(i, j).unwrap());
                c0 += cp;
            }
            r0 += rp;
        }
        prop_assert_eq!(rebuilt, data);
    }

    /// Envelope fits always verify with zero violations.
    #[test]
    fn envelope_fit_has_zero_violations(
        n in 3usize..14,
        seed in 0u64..1000,
    ) {
        let mut rng = sedlqr::rng::NoiseStream::new(seed, 4);
        let entries: Vec<f64> = (0..n * n).map(|_| rng.next_normal()).collect();
        let (bm, topo) = cycle_matrix(n, &entries);
        let cert = fit_sed(&bm, &topo, FitMode::Envelope).unwrap();
        prop_assert_eq!(cert.max_violation, 0.0);
        for i in 0..n {
            for j in 0..n {
                let bound = cert.bound_at(topo.distance(i, j));
                prop_assert!(bm.block_norm(i, j) <= bound * (1.0 + 1e-12));
            }
        }
    }

    /// Products of certified matrices stay certified at the common rate with
    /// constant `N x y` (decay preservation under multiplication).
    #[test]
    fn product_preserves_decay_class(
        n in 3usize..12,
        seed in 0u64..1000,
    ) {
        let mut rng = sedlqr::rng::NoiseStream::new(seed, 5);
        let gamma_true = 0.2 + rng.next_uniform();
        let mk = |rng: &mut sedlqr::rng::NoiseStream| {
            let entries: Vec<f64> = (0..n * n).map(|_| rng.next_normal()).collect();
            entries
        };
        let ex = mk(&mut rng);
        let ey = mk(&mut rng);
        let topo = Topology::build_cycle(n, 1, 1).unwrap();
        let damp = |e: &[f64]| {
            DMatrix::from_fn(n, n, |i, j| {
                e[i * n + j] * (-gamma_true * f64::from(topo.distance(i, j))).exp()
            })
        };
        let x = BlockMatrix::state_state(damp(&ex), &topo).unwrap();
        let y = BlockMatrix::state_state(damp(&ey), &topo).unwrap();
        let cx = fit_sed(&x, &topo, FitMode::Envelope).unwrap();
        let cy = fit_sed(&y, &topo, FitMode::Envelope).unwrap();
        let gamma = cx.gamma.min(cy.gamma);
        let cx = cx.weaken_to(gamma).unwrap();
        let cy = cy.weaken_to(gamma).unwrap();
        prop_assert!(sed_product_check(&x, &y, &cx, &cy, &topo).unwrap());
    }

    /// The block-row norm sum dominates the spectral norm of symmetric
    /// positive-semidefinite matrices.
    #[test]
    fn block_row_bound_dominates_lambda_max(
        n in 2usize..12,
        seed in 0u64..1000,
    ) {
        let mut rng = sedlqr::rng::NoiseStream::new(seed, 6);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.next_normal());
        let psd = raw.tr_mul(&raw);
        let bm = BlockMatrix::new(psd.clone(), vec![1; n], vec![1; n]).unwrap();
        let bound = lambda_max_block_bound(&bm).unwrap();
        let norm = spectral_norm(&psd).unwrap();
        prop_assert!(bound >= norm * (1.0 - 1e-10), "bound {} < norm {}", bound, norm);
    }
}

/// Decay preservation holds on the randomly generated stable problem family
/// (the theorem-check analogue at problem scale).
#[test]
fn product_check_on_random_problem_family() {
    for seed in 0..30u64 {
        let prob = random_stable_sed_system(seed);
        let topo = prob.topology();
        let ca = fit_sed(prob.a(), topo, FitMode::Envelope).unwrap();
        let cb = fit_sed(prob.b(), topo, FitMode::Envelope).unwrap();
        let gamma = ca.gamma.min(cb.gamma);
        let ca = ca.weaken_to(gamma).unwrap();
        let cb = cb.weaken_to(gamma).unwrap();
        assert!(
            sed_product_check(prob.a(), prob.b(), &ca, &cb, topo).unwrap(),
            "seed {seed}"
        );
    }
}

/// The optimal disturbance-response blocks decay spatially, and faster decay
/// of the open loop means faster spatial decay: on the stable toy family the
/// fitted regression rate of every `L_k` is strictly positive and grows with
/// the stability rate.
#[test]
fn disturbance_blocks_decay_faster_for_more_stable_plants() {
    let n = 40;
    let h = 8;
    let gamma_l1 = |rho: f64| -> (Vec<f64>, f64) {
        let prob = counterexample_system(n, (-rho).exp()).unwrap();
        let cert = fit_stability(prob.a().data(), 200).unwrap();
        let g = solve_lyapunov_g(prob.a().data(), prob.q().data(), &cert).unwrap();
        let ds = assemble(&prob, &g, &cert, h).unwrap();
        let l = solve_direct(&ds).unwrap();
        let gammas: Vec<f64> = (1..=h)
            .map(|k| {
                let block = l.l_block(k).unwrap();
                fit_sed(&block, prob.topology(), FitMode::Regression).unwrap().gamma
            })
            .collect();
        let g1 = gammas[0];
        (gammas, g1)
    };
    let (gammas_slow, g1_slow) = gamma_l1(0.05);
    let (gammas_fast, g1_fast) = gamma_l1(0.2);
    for (k, g) in gammas_slow.iter().enumerate() {
        assert!(*g > 0.0, "rho=0.05: gamma of L_{} = {g}", k + 1);
    }
    for (k, g) in gammas_fast.iter().enumerate() {
        assert!(*g > 0.0, "rho=0.2: gamma of L_{} = {g}", k + 1);
    }
    assert!(
        g1_fast > g1_slow,
        "decay rate should grow with stability: gamma(0.2) = {g1_fast} vs gamma(0.05) = {g1_slow}"
    );
}

/// Profiles are deterministic and sorted, and identity-like banded systems
/// report their support correctly (guards the measurement backend the decay
/// studies rest on).
#[test]
fn profile_support_detection() {
    let prob = counterexample_system(12, 0.5).unwrap();
    let profile = block_norm_profile(prob.b(), prob.topology()).unwrap();
    assert!(profile[0].1 > 0.0 && profile[1].1 > 0.0);
    assert!(profile[2..].iter().all(|&(_, v)| v == 0.0));
    let again = block_norm_profile(prob.b(), prob.topology()).unwrap();
    assert_eq!(profile, again);
}
