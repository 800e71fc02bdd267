mod common;

use std::sync::Arc;

use common::seeded;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svtune::expr::{Expr, ExprMatrix};
use svtune::linalg::C64;
use svtune::model::realize::{poly_mul, realize_transfer_matrix, Rational};
use svtune::model::{
    fit_pole_asymptote, FnMap, ParametricStateSpace, SensitivityKind, SensitivityMethod,
};

fn two_by_two_example() -> ParametricStateSpace {
    realize_transfer_matrix(&[
        vec![
            Rational::new(vec![1.0, 0.0], poly_mul(&[1.0, 1.0], &[1.0, 2.0])),
            Rational::new(vec![1.0, -3.0], vec![1.0, 3.0, 3.0]),
        ],
        vec![
            Rational::new(vec![1.0, 4.0, 10.0], vec![1.0, -1.0, 1.0]),
            Rational::new(vec![1.0, 4.0], poly_mul(&[1.0, 1.0], &[2.0, -1.0])),
        ],
    ])
    .unwrap()
}

#[test]
fn example_dc_gain_matches_entrywise_evaluation() {
    // Entries at s = 0: 0/2, -3/3, 10/1, 4/(1 * -1)
    let oracle = [[0.0, -1.0], [10.0, -4.0]];
    let g = two_by_two_example()
        .frequency_response(&[], C64::new(0.0, 0.0))
        .unwrap()
        .g;
    for i in 0..2 {
        for j in 0..2 {
            assert!((g[(i, j)] - C64::new(oracle[i][j], 0.0)).norm() < 1e-12);
        }
    }
}

#[test]
fn example_pole_set() {
    let sys = two_by_two_example();
    let poles = sys.compute_poles(&[]).unwrap();
    assert_eq!(poles.count_with_multiplicity(), sys.n_x());
    let h = 0.87;
    let expected = [
        C64::new(-1.0, 0.0),
        C64::new(-2.0, 0.0),
        C64::new(0.5, 0.0),
        C64::new(-1.5, h),
        C64::new(-1.5, -h),
        C64::new(0.5, h),
        C64::new(0.5, -h),
    ];
    for e in expected {
        let d = poles.iter().map(|p| (p.value - e).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-2, "no pole near {e}");
    }
    let minus_one = poles.iter().find(|p| (p.value + 1.0).norm() < 1e-6).unwrap();
    assert_eq!(minus_one.multiplicity, 2);
    assert!((poles.max_real() - 0.5).abs() < 1e-9);
}

#[test]
fn cubic_dependency_finite_difference_matches_chain_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 4;
    let a0 = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -3.0 + rng.gen_range(-0.5..0.5)
        } else {
            rng.gen_range(-1.0..1.0)
        }
    });
    let a1 = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5));
    let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
    let c = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
    let (a0e, a1e, be) = (a0.clone(), a1.clone(), b.clone());
    let a1j = a1.clone();
    let map = FnMap::new(move |k| (&a0e + &a1e * k[0].powi(3), be.clone()))
        .with_jacobian(move |k| vec![(&a1j * (3.0 * k[0] * k[0]), DMatrix::zeros(n, 2))]);
    let sys = ParametricStateSpace::new(
        n,
        2,
        c,
        DVector::from_element(1, 0.0),
        DVector::from_element(1, 2.0),
        Arc::new(map),
    )
    .unwrap();
    let s = C64::new(0.2, 1.3);
    let analytic = sys
        .linearize_response(&[0.9], s, SensitivityMethod::Analytic)
        .unwrap();
    let fd = sys
        .linearize_response(&[0.9], s, SensitivityMethod::CentralDifference { step: Some(1e-5) })
        .unwrap();
    assert_eq!(analytic.method, SensitivityKind::Analytic);
    assert_eq!(fd.method, SensitivityKind::CentralDifference);
    let da = &analytic.sensitivities[0];
    let rel = (&fd.sensitivities[0] - da).norm() / da.norm();
    assert!(rel < 1e-4, "relative error {rel}");
}

/// Durand-Kerner iteration on a monic polynomial (coefficients highest first).
fn durand_kerner(coeffs: &[f64]) -> Vec<C64> {
    let n = coeffs.len() - 1;
    let p = |z: C64| coeffs.iter().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c);
    let seed = C64::new(0.4, 0.9);
    let mut roots: Vec<C64> = (0..n).map(|i| seed.powu(i as u32)).collect();
    for _ in 0..2000 {
        let prev = roots.clone();
        for i in 0..n {
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = p(roots[i]) / denom;
            roots[i] -= step;
        }
        let change = roots.iter().zip(&prev).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if change < 1e-15 {
            break;
        }
    }
    // polish with Newton
    let dp = |z: C64| {
        coeffs[..n]
            .iter()
            .enumerate()
            .fold(C64::new(0.0, 0.0), |acc, (i, &c)| acc * z + c * (n - i) as f64)
    };
    roots.iter().map(|&z| z - p(z) / dp(z)).collect()
}

#[test]
fn companion_eigenvalues_match_polynomial_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // Well separated roots so the root finder oracle is well conditioned.
    let mut poly = vec![1.0];
    let mut true_roots = Vec::new();
    for i in 0..3 {
        let re = -0.5 - i as f64 + rng.gen_range(-0.2..0.2);
        let im = 0.5 + i as f64 + rng.gen_range(-0.2..0.2);
        poly = poly_mul(&poly, &[1.0, -2.0 * re, re * re + im * im]);
        true_roots.push(C64::new(re, im));
    }
    let n = 6;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -poly[n - j];
    }
    let sys = ParametricStateSpace::constant(a, DMatrix::zeros(n, 1), DMatrix::zeros(1, n)).unwrap();
    let eig = sys.compute_poles(&[]).unwrap().expanded();
    let roots = durand_kerner(&poly);
    assert_eq!(eig.len(), 6);
    for r in &roots {
        let d = eig.iter().map(|e| (e - r).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-8, "root {r} is {d} away from the spectrum");
    }
    for e in &eig {
        let d = roots.iter().map(|r| (e - r).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-8);
    }
}

fn random_system(seed: u64, n: usize, n_w: usize, n_y: usize) -> ParametricStateSpace {
    // A(K) = A0 + K0 A1 + K1^2 A2 + (1/K2) A3, B(K) = B0 + K0 B1
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_mat = |r: usize, c: usize, scale: f64| {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
    };
    let a0 = rand_mat(n, n, 1.0) - DMatrix::identity(n, n) * 2.0;
    let a_terms = [rand_mat(n, n, 0.5), rand_mat(n, n, 0.5), rand_mat(n, n, 0.5)];
    let b0 = rand_mat(n, n_w, 1.0);
    let b1 = rand_mat(n, n_w, 0.5);
    let c = rand_mat(n_y, n, 1.0);
    let k = [Expr::param(0), Expr::param(1) * Expr::param(1), Expr::param(2).recip().unwrap()];
    let mut a = ExprMatrix::from_constant(&a0);
    for (coef, m) in k.iter().zip(&a_terms) {
        for i in 0..n {
            for j in 0..n {
                a.add_to(i, j, &(coef * m[(i, j)]));
            }
        }
    }
    let mut b = ExprMatrix::from_constant(&b0);
    for i in 0..n {
        for j in 0..n_w {
            b.add_to(i, j, &(&k[0] * b1[(i, j)]));
        }
    }
    ParametricStateSpace::from_exprs(
        a,
        b,
        c,
        DVector::from_vec(vec![-1.0, -1.0, 0.5]),
        DVector::from_vec(vec![1.0, 1.0, 2.0]),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(seeded(100, 0x30de))]

    #[test]
    fn response_is_conjugate_symmetric(seed in any::<u64>(), re in -2.0..2.0f64, im in -3.0..3.0f64) {
        let sys = random_system(seed, 4, 2, 3);
        let k = [0.1, -0.3, 1.0];
        let s = C64::new(re, im);
        if let (Ok(g), Ok(gc)) = (sys.frequency_response(&k, s), sys.frequency_response(&k, s.conj())) {
            let diff = (&gc.g - g.g.map(|z| z.conj())).norm();
            prop_assert!(diff <= 1e-9 * (1.0 + g.g.norm()));
        }
    }

    #[test]
    fn pole_count_equals_state_dimension(
        seed in any::<u64>(), n in 1usize..9,
        k0 in -1.0..1.0f64, k1 in -1.0..1.0f64, k2 in 0.5..2.0f64,
    ) {
        let sys = random_system(seed, n, 1, 1);
        let poles = sys.compute_poles(&[k0, k1, k2]).unwrap();
        prop_assert_eq!(poles.count_with_multiplicity(), n);
        // closed under conjugation
        for p in poles.iter() {
            let found = poles.iter().any(|q| (q.value - p.value.conj()).norm() < 1e-6 && q.multiplicity == p.multiplicity);
            prop_assert!(found);
        }
    }

    #[test]
    fn linearization_error_is_superlinear(
        seed in any::<u64>(),
        dir in prop::array::uniform3(-1.0..1.0f64),
        re in -0.5..0.5f64, im in 0.0..3.0f64,
    ) {
        let sys = random_system(seed, 4, 2, 2);
        let k0 = [0.0, 0.2, 1.0];
        let s = C64::new(re, im);
        let lin = match sys.linearize_response(&k0, s, SensitivityMethod::Auto) {
            Ok(l) => l,
            Err(_) => return Ok(()),
        };
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
        let ratio = |h: f64| {
            let k: Vec<f64> = (0..3).map(|i| k0[i] + h * dir[i] / norm).collect();
            let g = sys.frequency_response(&k, s).unwrap().g;
            (g - lin.eval(&k)).norm() / h
        };
        let (r2, r3) = (ratio(1e-2), ratio(1e-3));
        prop_assert!(r3 <= 10.0 * r2 + 1e-9, "r(1e-3) = {r3}, r(1e-2) = {r2}");
        prop_assert!(r3 <= 0.2 * r2 + 1e-6, "error not second order: {r3} vs {r2}");
    }
}

fn asymptote_slope(sys: &ParametricStateSpace, pole: C64, direction: C64) -> f64 {
    let op = sys.at(&[]).unwrap();
    let radii: Vec<f64> = (0..=20).map(|i| 10f64.powf(-4.0 + 0.1 * i as f64)).collect();
    fit_pole_asymptote(&op, pole, direction, &radii).unwrap().slope
}

#[test]
fn slope_near_simple_and_double_poles() {
    // diag(1/(s+1), 1/(s+2)^2) and a coupled 2x2 with a double pole at -0.5
    let sys = realize_transfer_matrix(&[
        vec![Rational::new(vec![1.0], vec![1.0, 1.0]), Rational::new(vec![0.0], vec![1.0])],
        vec![Rational::new(vec![0.0], vec![1.0]), Rational::new(vec![1.0], vec![1.0, 4.0, 4.0])],
    ])
    .unwrap();
    for (pole, n_p) in [(C64::new(-1.0, 0.0), 1.0), (C64::new(-2.0, 0.0), 2.0)] {
        for dir in [C64::new(0.0, 1.0), C64::new(1.0, 1.0)] {
            let slope = asymptote_slope(&sys, pole, dir);
            assert!((slope + n_p).abs() < 0.05 * n_p, "slope {slope} at {pole}");
        }
    }
    let sys = realize_transfer_matrix(&[vec![
        Rational::new(vec![1.0, 3.0], vec![1.0, 1.0, 0.25]),
        Rational::new(vec![2.0], vec![1.0, 0.5]),
    ]])
    .unwrap();
    let slope = asymptote_slope(&sys, C64::new(-0.5, 0.0), C64::new(0.3, 1.0));
    assert!((slope + 2.0).abs() < 0.1, "slope {slope}");
}
