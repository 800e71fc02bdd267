mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svtune::linalg::{hermitian_eigenvalues, C64};
use svtune::model::{LinearizedResponse, ParameterVector, SensitivityKind};
use svtune::subproblem::{schur_embed, solve_subproblem, ConvexSubproblem, SolveStatus};

#[test]
fn schur_block_definiteness_matches_singular_value_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    for _ in 0..200 {
        let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let g = random_complex(&mut rng, r, c, 2.0);
        let sigma = power_sigma(&g);
        let rel: f64 = rng.gen_range(1e-6..0.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let gamma = sigma * (1.0 + rel);
        let min_eig = hermitian_eigenvalues(&schur_embed(&g, gamma))[0];
        if (min_eig > 1e-10) == (sigma < gamma) {
            agree += 1;
        }
    }
    assert_eq!(agree, 200);
}

#[test]
fn solver_matches_brute_force_grid() {
    for seed in 0..20u64 {
        let inst = random_instance(seed, 1 + (seed % 2) as usize);
        let sol = solve_subproblem(&inst.problem);
        assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}");
        let grid = brute_force(&inst);
        assert!((sol.gamma - grid).abs() <= 2e-3, "seed {seed}: solver {} grid {}", sol.gamma, grid);
        // the reported value is the true sampled maximum at the returned point
        assert!((sol.gamma - oracle_value(&inst.problem, sol.k_new.as_slice())).abs() < 1e-9);
        for (l, &k) in sol.k_new.iter().enumerate() {
            assert!(k >= inst.lo[l] - 1e-12 && k <= inst.hi[l] + 1e-12);
        }
        assert!(sol.certificate.iter().all(|&c| c >= -1e-9));
    }
}

#[test]
fn anchor_is_returned_when_nothing_helps() {
    // the sensitivity only makes the single sample worse in both directions
    let k0 = DVector::from_element(1, 0.0);
    let sample = LinearizedResponse {
        base_k: k0.clone(),
        s: C64::new(0.0, 1.0),
        base_g: DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]),
        sensitivities: vec![DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)])],
        method: SensitivityKind::Analytic,
    };
    let bounds = ParameterVector::new(k0.clone(), DVector::from_element(1, -1.0), DVector::from_element(1, 1.0), DVector::from_element(1, 0.5)).unwrap();
    let sol = solve_subproblem(&ConvexSubproblem::new(vec![sample], bounds).unwrap());
    assert_eq!(sol.k_new, k0);
    assert!((sol.gamma - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(seeded(24, 0x5b01))]

    #[test]
    fn shrinking_the_trust_region_never_helps(seed in any::<u64>(), n in 1usize..3, shrink in 0.1..0.9f64) {
        let inst = random_instance(seed, n);
        let wide = solve_subproblem(&inst.problem);
        let b = inst.problem.bounds();
        let narrow_bounds = ParameterVector::new(
            b.values().clone(),
            b.lower().clone(),
            b.upper().clone(),
            b.trust_radius() * shrink,
        )
        .unwrap();
        let narrow = solve_subproblem(&ConvexSubproblem::new(inst.problem.linearized().to_vec(), narrow_bounds).unwrap());
        prop_assert!(narrow.gamma >= wide.gamma - 1e-6, "narrow {} wide {}", narrow.gamma, wide.gamma);
        prop_assert!(wide.gamma <= wide.gamma_at_anchor + 1e-12);
    }

    #[test]
    fn solution_never_worse_than_anchor(seed in any::<u64>(), n in 1usize..3) {
        let inst = random_instance(seed, n);
        let sol = solve_subproblem(&inst.problem);
        let anchor = oracle_value(&inst.problem, inst.problem.anchor_k().as_slice());
        prop_assert!((sol.gamma_at_anchor - anchor).abs() < 1e-9);
        prop_assert!(sol.gamma <= anchor + 1e-12);
    }
}
