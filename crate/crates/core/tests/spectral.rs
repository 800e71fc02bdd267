mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use common::*;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svtune::linalg::{hermitian_eigenvalues, C64};
use svtune::model::realize::poly_mul;
use svtune::spectral::{
    build_sample_set, curve_distance, default_sample_set, gamma_of, sigma_max, OptimizationCurve, SampleSet,
    SampleTag, SpectralError,
};

/// Largest singular value of a real 2x2 matrix from the trace and determinant of `MᵀM`.
fn sigma_2x2(m: [[f64; 2]; 2]) -> f64 {
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let d = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let tr = a + d;
    let det = a * d - b * b;
    (0.5 * (tr + (tr * tr - 4.0 * det).sqrt())).sqrt()
}

#[test]
fn dc_gain_of_example_has_closed_form_peak() {
    let sys = example_system();
    let g = sys.frequency_response(&[], C64::new(0.0, 0.0)).unwrap().g;
    let expected = sigma_2x2([[0.0, -1.0], [10.0, -4.0]]);
    assert!((sigma_max(&g).unwrap() - expected).abs() < 1e-12);
    assert!((expected - ((117.0 + 13289f64.sqrt()) / 2.0).sqrt()).abs() < 1e-12);
}

#[test]
fn first_order_peak_on_vertical_line() {
    // |1 / (0.7 + jω - 0.5)| peaks at ω = 0 with value 5
    let sys = scalar(&[1.0], &[1.0, -0.5]);
    let op = sys.at(&[]).unwrap();
    let curve = OptimizationCurve::vertical(0.7);
    let omega = default_sample_set(op.poles(), &curve);
    let g = gamma_of(&op, &curve, &omega).unwrap();
    assert!((g.value - 5.0).abs() < 1e-10);
    assert_eq!(g.argmax_t, 0.0);
    assert!((g.attained_near.unwrap() - C64::new(0.5, 0.0)).norm() < 1e-9);
}

#[test]
fn example_peak_sits_next_to_the_complex_pair() {
    let sys = example_system();
    let op = sys.at(&[]).unwrap();
    let curve = OptimizationCurve::vertical(0.7);
    let omega = default_sample_set(op.poles(), &curve);
    let g = gamma_of(&op, &curve, &omega).unwrap();
    assert!((g.argmax_t.abs() - 0.75f64.sqrt()).abs() < 0.1, "argmax at {}", g.argmax_t);
    let near = g.attained_near.unwrap();
    assert!((near.re - 0.5).abs() < 1e-6 && (near.im.abs() - 0.75f64.sqrt()).abs() < 1e-6);

    // a dense scan of the same line agrees with the sampled peak, which dwarfs the typical value
    let mut dense: Vec<f64> = (0..=20000)
        .map(|i| {
            let w = -5.0 + 5e-4 * i as f64;
            sigma_max(&sys.frequency_response(&[], C64::new(0.7, w)).unwrap().g).unwrap()
        })
        .collect();
    let dense_max = dense.iter().copied().fold(0.0, f64::max);
    assert!(g.value >= 0.99 * dense_max, "sampled {} vs dense {}", g.value, dense_max);
    dense.sort_by(f64::total_cmp);
    let median = dense[dense.len() / 2];
    assert!(g.value > 10.0 * median);
}

#[test]
fn peak_grows_as_the_curve_approaches_a_pole() {
    for (den, order) in [(vec![1.0, -0.5], 1), (poly_mul(&[1.0, -0.5], &[1.0, -0.5]), 2)] {
        let sys = scalar(&[1.0], &den);
        let op = sys.at(&[]).unwrap();
        let mut prev: Option<f64> = None;
        for e in 1..=5 {
            let d = 10f64.powi(-e);
            let curve = OptimizationCurve::vertical(0.5 + d);
            let g = gamma_of(&op, &curve, &default_sample_set(op.poles(), &curve)).unwrap().value;
            assert!((g - d.powi(-order)).abs() < 1e-6 * g, "Γ = {g} at d = {d}");
            if let Some(p) = prev {
                assert!(g >= 5.0 * p);
            }
            prev = Some(g);
        }
    }
}

#[test]
fn curve_through_a_pole_is_reported() {
    let sys = scalar(&[1.0], &[1.0, -0.5]);
    let op = sys.at(&[]).unwrap();
    let curve = OptimizationCurve::vertical(0.5);
    let omega = SampleSet::from_values(&[0.0, 1.0], true);
    assert!(matches!(gamma_of(&op, &curve, &omega), Err(SpectralError::NearPole { .. })));
}

#[test]
fn distant_poles_still_get_the_fallback_grid() {
    let sys = scalar(&[1.0], &[1.0, 100.0]);
    let op = sys.at(&[]).unwrap();
    let curve = OptimizationCurve::vertical(0.0);
    let omega = build_sample_set(op.poles(), &curve, 1.0, 7);
    assert!(omega.anchors().is_empty());
    assert!(omega.samples().iter().all(|s| s.tag == SampleTag::FallbackGrid));
    assert_eq!(omega.evaluation_samples().len(), 21);
    assert!((gamma_of(&op, &curve, &omega).unwrap().value - 0.01).abs() < 1e-12);
}

fn half_circle() -> OptimizationCurve {
    OptimizationCurve::generic(|t| C64::from_polar(2.0, t), (-FRAC_PI_2, FRAC_PI_2)).unwrap()
}

/// Distance from `s` to the right half of the circle of radius 2.
fn half_circle_distance(s: C64) -> f64 {
    if s.re >= 0.0 {
        (s.norm() - 2.0).abs()
    } else {
        (s - C64::new(0.0, 2.0)).norm().min((s - C64::new(0.0, -2.0)).norm())
    }
}

#[test]
fn generic_curve_rejects_bad_domains() {
    assert!(OptimizationCurve::generic(|t| C64::new(t, 0.0), (1.0, 1.0)).is_err());
    assert!(OptimizationCurve::generic(|t| C64::new(t, 0.0), (0.0, f64::INFINITY)).is_err());
}

#[test]
fn circular_arc_side_and_samples() {
    let curve = half_circle();
    // travelling counter-clockwise, the inside of the circle is on the left
    assert!(curve.side(C64::new(1.0, 0.0)) < 0.0);
    assert!(curve.side(C64::new(3.0, 0.5)) > 0.0);
    let sys = scalar(&[1.0], &[1.0, -1.9]);
    let op = sys.at(&[]).unwrap();
    let omega = default_sample_set(op.poles(), &curve);
    assert!(!omega.is_folded());
    let g = gamma_of(&op, &curve, &omega).unwrap();
    assert!((g.value - 10.0).abs() < 1e-6, "Γ = {}", g.value);
    assert!(g.argmax_t.abs() < 1e-6);
}

proptest! {
    #![proptest_config(seeded(64, 0x5bec))]

    #[test]
    fn arc_distance_matches_geometry(r in 0.0..4.0f64, phi in -PI..PI) {
        let s = C64::from_polar(r, phi);
        let d = curve_distance(s, &half_circle());
        prop_assert!((d - half_circle_distance(s)).abs() < 1e-9, "{d} vs {}", half_circle_distance(s));
    }

    #[test]
    fn sigma_max_is_the_root_of_the_gram_spectrum(seed in any::<u64>(), r in 1usize..5, c in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_complex(&mut rng, r, c, 1.0);
        let gram = a.adjoint() * &a;
        let top = *hermitian_eigenvalues(&gram).last().unwrap();
        prop_assert!((sigma_max(&a).unwrap() - top.max(0.0).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn sigma_max_is_a_submultiplicative_norm(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_complex(&mut rng, n, n, 1.0);
        let b = random_complex(&mut rng, n, n, 1.0);
        let (sa, sb) = (sigma_max(&a).unwrap(), sigma_max(&b).unwrap());
        prop_assert!(sigma_max(&(&a * &b)).unwrap() <= sa * sb + 1e-12);
        prop_assert!(sigma_max(&(&a + &b)).unwrap() <= sa + sb + 1e-12);
        prop_assert!((sigma_max(&(&a * C64::new(0.0, -3.0))).unwrap() - 3.0 * sa).abs() < 1e-10);
    }

    #[test]
    fn refining_the_sample_set_never_lowers_gamma(extra in prop::collection::vec(-3.0..3.0f64, 1..8), delta in 0.55..2.0f64) {
        let sys = example_system();
        let op = sys.at(&[]).unwrap();
        let curve = OptimizationCurve::vertical(delta);
        let base = default_sample_set(op.poles(), &curve);
        let mut refined = base.clone();
        refined.extend(&SampleSet::from_values(&extra, true));
        let g0 = gamma_of(&op, &curve, &base).unwrap().value;
        let g1 = gamma_of(&op, &curve, &refined).unwrap().value;
        prop_assert!(g1 >= g0);
        let w = refined.values();
        prop_assert!(w.windows(2).all(|p| p[0] < p[1]));
        // folded sets are symmetric about zero
        for t in &w {
            prop_assert!(w.iter().any(|u| (u + t).abs() <= 1e-12 * (1.0 + t.abs())));
        }
    }

    #[test]
    fn conjugate_symmetry_justifies_folding(w in 0.0..5.0f64, delta in -1.0..2.0f64) {
        let sys = example_system();
        let s = C64::new(delta, w);
        prop_assume!(sys.compute_poles(&[]).unwrap().iter().all(|p| (p.value - s).norm() > 1e-3 && (p.value - s.conj()).norm() > 1e-3));
        let a = sigma_max(&sys.frequency_response(&[], s).unwrap().g).unwrap();
        let b = sigma_max(&sys.frequency_response(&[], s.conj()).unwrap().g).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
}
