//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use proptest::test_runner::{Config as ProptestConfig, RngSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svtune::grid::file::{
    BusData, Channel, ControllerData, DisturbanceData, DynamicProsumerData, LineData, MachineData,
    MachineModel, ModelFile, SlackData, StaticProsumerData,
};
use svtune::grid::Param;
use svtune::linalg::C64;
use svtune::model::realize::{poly_mul, realize_transfer_matrix, Rational};
use svtune::model::{FnMap, LinearizedResponse, ParameterVector, ParametricStateSpace, SensitivityKind};
use svtune::subproblem::ConvexSubproblem;

/// Property-test settings with a fixed generator seed, so runs repeat exactly.
pub fn seeded(cases: u32, seed: u64) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        ..ProptestConfig::default()
    }
}

pub const OMEGA0: f64 = 376.99111843077515;

pub fn classical(h: f64, d: f64, xdp: f64) -> MachineData {
    MachineData {
        model: MachineModel::Classical,
        h,
        d,
        xd_prime: xdp,
        xd: None,
        td0_prime: None,
        omega0: OMEGA0,
    }
}

pub fn smib(d: f64) -> ModelFile {
    ModelFile {
        format: 1,
        name: "smib".into(),
        slack: SlackData { bus: 0, voltage: 1.0 },
        buses: vec![BusData::default(), BusData::default()],
        lines: vec![LineData {
            from: 1,
            to: 0,
            r: 0.0,
            x: 0.4,
            b: 0.0,
        }],
        admittance: None,
        static_prosumers: vec![StaticProsumerData {
            name: "W".into(),
            bus: 1,
            p: 0.0,
            q: 0.0,
        }],
        dynamic_prosumers: vec![DynamicProsumerData {
            name: "G".into(),
            bus: 1,
            p_set: 0.8,
            v_set: 1.05,
            machine: classical(4.0, d, 0.25),
            controllers: vec![],
        }],
        outputs: vec![],
        disturbances: vec![DisturbanceData {
            prosumer: "W".into(),
            channel: Channel::P,
        }],
    }
}

/// Internal angle and voltage of a machine behind `xdp` feeding `p` into a bus
/// at `v` that is tied to the infinite bus by reactance `xl`.
pub fn smib_oracle(p: f64, v: f64, xl: f64, xdp: f64) -> (f64, f64, f64) {
    // bus angle from P = v sin(theta) / xl
    let theta = (p * xl / v).asin();
    let vb = Complex::from_polar(v, theta);
    let current = (vb - 1.0) / Complex::new(0.0, xl);
    let e = vb + Complex::new(0.0, xdp) * current;
    (e.norm(), e.arg(), xdp + xl)
}

pub fn two_machine() -> ModelFile {
    let flux = |h| MachineData {
        model: MachineModel::FluxDecay,
        h,
        d: 1.0,
        xd_prime: 0.3,
        xd: Some(1.6),
        td0_prime: Some(6.0),
        omega0: OMEGA0,
    };
    ModelFile {
        format: 1,
        name: "two-machine".into(),
        slack: SlackData { bus: 0, voltage: 1.0 },
        buses: vec![BusData::default(); 4],
        lines: vec![
            LineData { from: 1, to: 3, r: 0.01, x: 0.12, b: 0.02 },
            LineData { from: 2, to: 3, r: 0.01, x: 0.15, b: 0.02 },
            LineData { from: 3, to: 0, r: 0.02, x: 0.25, b: 0.04 },
        ],
        admittance: None,
        static_prosumers: vec![StaticProsumerData { name: "L".into(), bus: 3, p: -1.5, q: -0.4 }],
        dynamic_prosumers: vec![
            DynamicProsumerData {
                name: "A".into(),
                bus: 1,
                p_set: 0.9,
                v_set: 1.02,
                machine: flux(5.0),
                controllers: vec![
                    ControllerData::Avr { ka: Param::slot("A.ka", 50.0, 1.0, 400.0), ta: Param::Fixed(0.05) },
                    ControllerData::Pss {
                        ks: Param::slot("A.ks", 8.0, 0.0, 40.0),
                        tw: Param::Fixed(10.0),
                        t1: Param::slot("A.t1", 0.3, 0.01, 2.0),
                        t2: Param::Fixed(0.05),
                        t3: Param::Fixed(0.3),
                        t4: Param::slot("A.t4", 0.05, 0.01, 1.0),
                    },
                ],
            },
            DynamicProsumerData {
                name: "B".into(),
                bus: 2,
                p_set: 0.7,
                v_set: 1.01,
                machine: flux(4.0),
                controllers: vec![
                    ControllerData::Governor { r: Param::slot("B.r", 0.05, 0.01, 0.2), tg: Param::slot("B.tg", 0.4, 0.05, 2.0) },
                    ControllerData::Avr { ka: Param::Fixed(30.0), ta: Param::slot("B.ta", 0.1, 0.01, 1.0) },
                ],
            },
        ],
        outputs: vec![],
        disturbances: vec![DisturbanceData { prosumer: "L".into(), channel: Channel::P }],
    }
}

/// Finite eigenvalues of the pencil `(E, Ā)` by shift-and-invert.
pub fn pencil_finite_eigenvalues(e: &DMatrix<f64>, a: &DMatrix<f64>, sigma: f64) -> Vec<C64> {
    let m = (a - e * sigma).lu().solve(e).unwrap();
    m.complex_eigenvalues()
        .iter()
        .filter(|mu| mu.norm() > 1e-9)
        .map(|mu| C64::new(sigma, 0.0) + mu.inv())
        .collect()
}

/// Largest relative distance in a greedy one-to-one matching of two spectra.
pub fn spectrum_mismatch(mut a: Vec<C64>, b: Vec<C64>) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for x in b {
        let (i, d) = a
            .iter()
            .enumerate()
            .map(|(i, y)| (i, (x - y).norm() / (1.0 + x.norm())))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        worst = worst.max(d);
        a.swap_remove(i);
    }
    worst
}

pub fn assert_same_spectrum(a: Vec<C64>, b: Vec<C64>, tol: f64) {
    let d = spectrum_mismatch(a, b);
    assert!(d < tol, "spectra differ by {d:e}");
}

/// The 2x2 transfer matrix example with a double pole at -1.
pub fn example_system() -> ParametricStateSpace {
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

pub fn scalar(num: &[f64], den: &[f64]) -> ParametricStateSpace {
    realize_transfer_matrix(&[vec![Rational::new(num.to_vec(), den.to_vec())]]).unwrap()
}

/// `σ̄(G)` by power iteration on `G*G`, independent of the library's SVD.
pub fn power_sigma(g: &DMatrix<C64>) -> f64 {
    let gram = g.adjoint() * g;
    let mut v = DVector::from_fn(gram.ncols(), |i, _| C64::new(1.0 + i as f64 * 0.37, 0.1 * i as f64));
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / C64::new(norm, 0.0);
        lambda = (next.adjoint() * &gram * &next)[(0, 0)].re;
        if (&next - &v).norm() < 1e-15 {
            break;
        }
        v = next;
    }
    lambda.max(0.0).sqrt()
}

/// Closed-form `σ̄` of a complex 2x2 matrix.
pub fn sigma_2x2(g: &DMatrix<C64>) -> f64 {
    let fro2 = g.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let det = (g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)]).norm();
    (0.5 * (fro2 + (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt())).sqrt()
}

pub fn random_complex(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<C64> {
    DMatrix::from_fn(r, c, |_, _| C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)))
}

/// A random sampled subproblem with 2x2 responses and its feasible box.
pub struct Instance {
    pub problem: ConvexSubproblem,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

pub fn random_instance(seed: u64, n_params: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_samples = rng.gen_range(2..6);
    let lower = DVector::from_element(n_params, -1.0);
    let upper = DVector::from_element(n_params, 1.0);
    let k0 = DVector::from_fn(n_params, |_, _| rng.gen_range(-0.5..0.5));
    let trust = DVector::from_fn(n_params, |_, _| rng.gen_range(0.2..0.8));
    let samples = (0..n_samples)
        .map(|i| LinearizedResponse {
            base_k: k0.clone(),
            s: C64::new(0.0, i as f64),
            base_g: random_complex(&mut rng, 2, 2, 1.0),
            sensitivities: (0..n_params).map(|_| random_complex(&mut rng, 2, 2, 1.0)).collect(),
            method: SensitivityKind::Analytic,
        })
        .collect();
    let bounds = ParameterVector::new(k0, lower, upper, trust).unwrap();
    let (lo, hi) = bounds.trust_box();
    Instance {
        problem: ConvexSubproblem::new(samples, bounds).unwrap(),
        lo: lo.iter().copied().collect(),
        hi: hi.iter().copied().collect(),
    }
}

pub fn oracle_value(p: &ConvexSubproblem, k: &[f64]) -> f64 {
    p.linearized().iter().map(|l| sigma_2x2(&l.eval(k))).fold(0.0, f64::max)
}

/// Minimum over a grid of spacing 1e-3 covering the feasible box.
pub fn brute_force(inst: &Instance) -> f64 {
    let axis = |l: usize| -> Vec<f64> {
        let n = ((inst.hi[l] - inst.lo[l]) / 1e-3).ceil() as usize;
        (0..=n).map(|i| (inst.lo[l] + 1e-3 * i as f64).min(inst.hi[l])).collect()
    };
    match inst.lo.len() {
        1 => axis(0)
            .iter()
            .map(|&a| oracle_value(&inst.problem, &[a]))
            .fold(f64::INFINITY, f64::min),
        2 => {
            let (xs, ys) = (axis(0), axis(1));
            let mut best = f64::INFINITY;
            for &a in &xs {
                for &b in &ys {
                    best = best.min(oracle_value(&inst.problem, &[a, b]));
                }
            }
            best
        }
        _ => unreachable!(),
    }
}

/// `G(s) = 1 / (s - a(K))` with `K ∈ [lo, hi]`.
pub fn first_order(a: impl Fn(f64) -> f64 + Send + Sync + 'static, lo: f64, hi: f64) -> ParametricStateSpace {
    let map = FnMap::new(move |k: &[f64]| (DMatrix::from_element(1, 1, a(k[0])), DMatrix::identity(1, 1)));
    ParametricStateSpace::new(
        1,
        1,
        DMatrix::identity(1, 1),
        DVector::from_element(1, lo),
        DVector::from_element(1, hi),
        Arc::new(map),
    )
    .unwrap()
}
