//! The convex inner problem: minimize the largest sampled singular value of
//! the linearized response over the parameter box intersected with the
//! trust region.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, C64};
use crate::lmi::{LmiOptions, LmiProblem, NormBlock};
use crate::model::{LinearizedResponse, ParameterVector};

pub use crate::lmi::SolveStatus;

/// Absolute tolerance on the optimal Γ.
pub const GAMMA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SubproblemError {
    #[error("subproblem has no samples")]
    NoSamples,
    #[error("sample {index} was linearized at a different parameter vector")]
    AnchorMismatch { index: usize },
    #[error("sample {index} has {found} sensitivities, expected {expected}")]
    ParameterCount { index: usize, found: usize, expected: usize },
    #[error("sample {index} has shape {found:?}, expected {expected:?}")]
    Shape {
        index: usize,
        found: (usize, usize),
        expected: (usize, usize),
    },
}

/// `[[γI, G], [G*, γI]]`, positive definite exactly when `σ̄(G) < γ`.
pub fn schur_embed(g: &DMatrix<C64>, gamma: f64) -> DMatrix<C64> {
    let (r, c) = g.shape();
    let mut h = DMatrix::zeros(r + c, r + c);
    for i in 0..r + c {
        h[(i, i)] = C64::new(gamma, 0.0);
    }
    h.view_mut((0, r), (r, c)).copy_from(g);
    h.view_mut((r, 0), (c, r)).copy_from(&g.adjoint());
    h
}

/// The real embedding `[[Re H, -Im H], [Im H, Re H]]` of a complex matrix.
///
/// For Hermitian `H` it is symmetric with the eigenvalues of `H`, each twice.
pub fn real_embedding(h: &DMatrix<C64>) -> DMatrix<f64> {
    let (r, c) = h.shape();
    let mut m = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = h[(i, j)];
            m[(i, j)] = z.re;
            m[(i, j + c)] = -z.im;
            m[(i + r, j)] = z.im;
            m[(i + r, j + c)] = z.re;
        }
    }
    m
}

/// Sampled linearized responses sharing one anchor, with the box and trust radii.
#[derive(Clone, Debug)]
pub struct ConvexSubproblem {
    linearized: Vec<LinearizedResponse>,
    bounds: ParameterVector,
}

impl ConvexSubproblem {
    /// `bounds.values()` is the anchor `K^(k-1)`.
    pub fn new(linearized: Vec<LinearizedResponse>, bounds: ParameterVector) -> Result<Self, SubproblemError> {
        let first = linearized.first().ok_or(SubproblemError::NoSamples)?;
        let shape = first.base_g.shape();
        for (index, l) in linearized.iter().enumerate() {
            if l.base_k != *bounds.values() {
                return Err(SubproblemError::AnchorMismatch { index });
            }
            if l.sensitivities.len() != bounds.len() {
                return Err(SubproblemError::ParameterCount {
                    index,
                    found: l.sensitivities.len(),
                    expected: bounds.len(),
                });
            }
            let bad = l.base_g.shape() != shape || l.sensitivities.iter().any(|d| d.shape() != shape);
            if bad {
                return Err(SubproblemError::Shape {
                    index,
                    found: l.base_g.shape(),
                    expected: shape,
                });
            }
        }
        Ok(Self { linearized, bounds })
    }

    pub fn linearized(&self) -> &[LinearizedResponse] {
        &self.linearized
    }

    pub fn bounds(&self) -> &ParameterVector {
        &self.bounds
    }

    pub fn anchor_k(&self) -> &DVector<f64> {
        self.bounds.values()
    }

    /// `max_k σ̄(G_L(K, s_k))`.
    pub fn linearized_gamma(&self, k: &[f64]) -> f64 {
        self.linearized
            .iter()
            .map(|l| linalg::sigma_max(&l.eval(k)))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub k_new: DVector<f64>,
    /// `max_k σ̄(G_L(K_new, s_k))`.
    pub gamma: f64,
    /// The same quantity at the anchor, for reference.
    pub gamma_at_anchor: f64,
    pub status: SolveStatus,
    /// Smallest eigenvalue of the Schur block at `(K_new, gamma)`, per sample.
    pub certificate: Vec<f64>,
    pub newton_steps: usize,
    pub message: Option<String>,
}

/// Solves the sampled convex problem to [`GAMMA_TOL`].
///
/// Parameters are mapped onto `[0, 1]` across the box intersected with the
/// trust region. Parameters with no influence on any sample stay at the
/// anchor, and the anchor itself is returned when no point does better by
/// more than the tolerance.
pub fn solve_subproblem(p: &ConvexSubproblem) -> SubproblemSolution {
    let anchor = p.anchor_k().clone();
    let gamma_at_anchor = p.linearized_gamma(anchor.as_slice());
    let (lo, hi) = p.bounds.trust_box();
    let active: Vec<usize> = (0..anchor.len())
        .filter(|&l| hi[l] > lo[l])
        .filter(|&l| p.linearized.iter().any(|s| s.sensitivities[l].iter().any(|z| *z != C64::new(0.0, 0.0))))
        .collect();

    let at_anchor = |status, message| finish(p, anchor.clone(), gamma_at_anchor, status, 0, message);
    if active.is_empty() {
        return at_anchor(SolveStatus::Optimal, None);
    }

    let scale = if gamma_at_anchor > 0.0 { gamma_at_anchor } else { 1.0 };
    let width: Vec<f64> = active.iter().map(|&l| hi[l] - lo[l]).collect();
    let to_k = |z: &DVector<f64>| {
        let mut k = anchor.clone();
        for (a, &l) in active.iter().enumerate() {
            k[l] = (lo[l] + z[a] * width[a]).clamp(lo[l], hi[l]);
        }
        k
    };
    let tol = GAMMA_TOL.min(1e-9 * scale.max(1.0));

    // Screening: a sample whose value cannot exceed some other sample's
    // guaranteed value anywhere in the box never constrains the optimum.
    let sigma0: Vec<f64> = p.linearized.iter().map(|l| linalg::sigma_max(&l.base_g)).collect();
    let reach: Vec<f64> = p
        .linearized
        .iter()
        .map(|s| {
            active
                .iter()
                .map(|&l| (hi[l] - anchor[l]).max(anchor[l] - lo[l]) * s.sensitivities[l].norm())
                .sum()
        })
        .collect();
    let floor = sigma0.iter().zip(&reach).map(|(g, r)| g - r).fold(f64::NEG_INFINITY, f64::max);
    let candidates: Vec<usize> = (0..sigma0.len()).filter(|&i| sigma0[i] + reach[i] >= floor).collect();

    // Cutting planes: solve on a working set, add every sample it violates.
    let mut working: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| sigma0[i] >= 0.75 * gamma_at_anchor)
        .collect();
    let mut steps = 0;
    loop {
        let sol = solve_on(p, &working, &active, &width, &lo, &anchor, scale, &to_k);
        steps += sol.newton_steps;
        let k_new = to_k(&sol.x);
        let values: Vec<(usize, f64)> = candidates
            .iter()
            .map(|&i| (i, linalg::sigma_max(&p.linearized[i].eval(k_new.as_slice()))))
            .collect();
        let level = values
            .iter()
            .filter(|(i, _)| working.contains(i))
            .map(|v| v.1)
            .fold(0.0, f64::max);
        let violated: Vec<usize> = values
            .iter()
            .filter(|(i, v)| *v > level + tol && !working.contains(i))
            .map(|v| v.0)
            .collect();
        if violated.is_empty() || sol.status == SolveStatus::InfeasibleNumerics {
            let gamma = values.iter().map(|v| v.1).fold(0.0, f64::max);
            if gamma >= gamma_at_anchor - tol {
                // no strict improvement over the anchor within tolerance
                return finish(p, anchor, gamma_at_anchor, sol.status, steps, sol.message);
            }
            return finish(p, k_new, gamma_at_anchor, sol.status, steps, sol.message);
        }
        working.extend(violated);
        working.sort_unstable();
    }
}

/// The LMI restricted to the samples in `working`, solved from the box centre.
#[allow(clippy::too_many_arguments)]
fn solve_on(
    p: &ConvexSubproblem,
    working: &[usize],
    active: &[usize],
    width: &[f64],
    lo: &DVector<f64>,
    anchor: &DVector<f64>,
    scale: f64,
    to_k: &dyn Fn(&DVector<f64>) -> DVector<f64>,
) -> crate::lmi::LmiSolution {
    let n = active.len();
    let zero = C64::new(0.0, 0.0);
    let blocks: Vec<NormBlock> = working
        .iter()
        .map(|&i| {
            let s = &p.linearized[i];
            // G_L at z = 0, i.e. at the lower corner of the active box
            let mut g0 = s.base_g.clone();
            for &l in active {
                let dk = lo[l] - anchor[l];
                if dk != 0.0 {
                    g0 += &s.sensitivities[l] * C64::new(dk, 0.0);
                }
            }
            let coeffs = active
                .iter()
                .zip(width)
                .enumerate()
                .filter(|(_, (&l, _))| s.sensitivities[l].iter().any(|z| *z != zero))
                .map(|(a, (&l, &w))| (a, &s.sensitivities[l] * C64::new(w / scale, 0.0)))
                .collect();
            NormBlock::new(g0 / C64::new(scale, 0.0), coeffs, n)
        })
        .collect();
    let mut cvec = DVector::zeros(n + 1);
    cvec[n] = 1.0;
    let mut lower = DVector::zeros(n + 1);
    let mut upper = DVector::from_element(n + 1, 1.0);
    lower[n] = f64::NEG_INFINITY;
    upper[n] = f64::INFINITY;
    let problem = LmiProblem {
        c: cvec,
        blocks,
        lower,
        upper,
    };
    let mut x0 = DVector::from_element(n + 1, 0.5);
    let k_mid = to_k(&x0);
    let g_start = working
        .iter()
        .map(|&i| linalg::sigma_max(&p.linearized[i].eval(k_mid.as_slice())))
        .fold(0.0, f64::max)
        / scale;
    x0[n] = 1.1 * g_start + 1e-3;
    let gap = (GAMMA_TOL / scale).clamp(1e-11, 1e-6) * 0.5;
    problem.solve(
        &x0,
        &LmiOptions {
            gap,
            ..LmiOptions::default()
        },
    )
}

fn finish(
    p: &ConvexSubproblem,
    k_new: DVector<f64>,
    gamma_at_anchor: f64,
    status: SolveStatus,
    newton_steps: usize,
    message: Option<String>,
) -> SubproblemSolution {
    let gs: Vec<DMatrix<C64>> = p.linearized.iter().map(|l| l.eval(k_new.as_slice())).collect();
    let gamma = gs.iter().map(linalg::sigma_max).fold(0.0, f64::max);
    let certificate = gs
        .iter()
        .map(|g| linalg::hermitian_eigenvalues(&schur_embed(g, gamma))[0])
        .collect();
    SubproblemSolution {
        k_new,
        gamma,
        gamma_at_anchor,
        status,
        certificate,
        newton_steps,
        message,
    }
}
