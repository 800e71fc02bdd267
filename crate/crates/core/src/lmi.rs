//! A small barrier interior-point solver for
//!
//! ```text
//! minimize    cᵀx
//! subject to  F_i0 + Σ_j x_j F_ij ≻ 0   (Hermitian blocks)
//!             lower < x < upper          (entries may be infinite)
//! ```
//!
//! Problems here have tens of variables and blocks of modest size, so dense
//! Newton steps on the log-det barrier are adequate. Blocks of the form
//! `[[γI, G(x)], [G(x)*, γI]]` have a dedicated representation, [`NormBlock`],
//! that works with the smaller matrix `γ²I - G*G`.

use nalgebra::{Cholesky, ComplexField, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::C64;

/// Value, gradient and Hessian of `-log det` of one block.
#[derive(Clone, Debug)]
pub struct BarrierTerms {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// A constraint `S(x) ≻ 0` with its log-det barrier.
pub trait BarrierBlock: Send + Sync {
    /// Dimension of `S`, which is the barrier's contribution to `m`.
    fn dim(&self) -> usize;
    /// `log det S(x)`, or `None` unless `S(x) ≻ 0`.
    fn log_det(&self, x: &DVector<f64>) -> Option<f64>;
    /// Terms of `-log det S(x)` over `n` variables.
    fn terms(&self, x: &DVector<f64>, n: usize, with_hessian: bool) -> Option<BarrierTerms>;
}

/// One LMI block `F0 + Σ_j x_j F_j ≻ 0`. `None` marks a zero coefficient.
#[derive(Clone, Debug)]
pub struct LmiBlock<T: ComplexField<RealField = f64>> {
    pub f0: DMatrix<T>,
    pub coeffs: Vec<Option<DMatrix<T>>>,
}

impl<T: ComplexField<RealField = f64>> LmiBlock<T> {
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<T> {
        let mut s = self.f0.clone();
        for (j, f) in self.coeffs.iter().enumerate() {
            if let Some(f) = f {
                if x[j] != 0.0 {
                    s += f * T::from_real(x[j]);
                }
            }
        }
        s
    }
}

impl<T: ComplexField<RealField = f64>> BarrierBlock for LmiBlock<T> {
    fn dim(&self) -> usize {
        self.f0.nrows()
    }

    fn log_det(&self, x: &DVector<f64>) -> Option<f64> {
        hermitian_cholesky(self.eval(x)).map(|c| log_det(&c))
    }

    fn terms(&self, x: &DVector<f64>, n: usize, with_hessian: bool) -> Option<BarrierTerms> {
        block_barrier(self, x, n, with_hessian)
    }
}

/// `σ̄(G0 + Σ x_j D_j) < x_γ`, i.e. `[[x_γ I, G], [G*, x_γ I]] ≻ 0`.
#[derive(Clone, Debug)]
pub struct NormBlock {
    g0: DMatrix<C64>,
    coeffs: Vec<(usize, DMatrix<C64>)>,
    gamma: usize,
}

impl NormBlock {
    /// `coeffs` pairs a variable index with its coefficient; `gamma` is the
    /// index of the bound. Wide matrices are stored transposed.
    pub fn new(g0: DMatrix<C64>, coeffs: Vec<(usize, DMatrix<C64>)>, gamma: usize) -> Self {
        assert!(coeffs.iter().all(|(j, d)| *j != gamma && d.shape() == g0.shape()));
        if g0.ncols() > g0.nrows() {
            return Self {
                g0: g0.adjoint(),
                coeffs: coeffs.into_iter().map(|(j, d)| (j, d.adjoint())).collect(),
                gamma,
            };
        }
        Self { g0, coeffs, gamma }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<C64> {
        let mut g = self.g0.clone();
        for (j, d) in &self.coeffs {
            if x[*j] != 0.0 {
                g += d * C64::new(x[*j], 0.0);
            }
        }
        g
    }

    /// `(g, G, chol(g²I - G*G))` when the block is positive definite.
    fn factor(&self, x: &DVector<f64>) -> Option<(f64, DMatrix<C64>, Cholesky<C64, Dyn>)> {
        let g = x[self.gamma];
        if !(g > 0.0) {
            return None;
        }
        let gm = self.eval(x);
        let mut m = -(gm.adjoint() * &gm);
        for i in 0..m.nrows() {
            m[(i, i)] += C64::new(g * g, 0.0);
        }
        let chol = hermitian_cholesky(m)?;
        Some((g, gm, chol))
    }
}

impl BarrierBlock for NormBlock {
    fn dim(&self) -> usize {
        self.g0.nrows() + self.g0.ncols()
    }

    fn log_det(&self, x: &DVector<f64>) -> Option<f64> {
        let (g, _, chol) = self.factor(x)?;
        let (p, q) = self.g0.shape();
        Some((p - q) as f64 * g.ln() + log_det(&chol))
    }

    fn terms(&self, x: &DVector<f64>, n: usize, with_hessian: bool) -> Option<BarrierTerms> {
        let (g, gm, chol) = self.factor(x)?;
        let (p, q) = gm.shape();
        let value = -((p - q) as f64 * g.ln() + log_det(&chol));
        // S⁻¹ = [[X, Y], [Y*, Z]] with Z = g M⁻¹, Y = -G M⁻¹, X = (I - Y G*) / g
        let m_inv = chol.inverse();
        let y = -(&gm * &m_inv);
        let z = &m_inv * C64::new(g, 0.0);
        let mut x_blk = -(&y * gm.adjoint());
        for i in 0..p {
            x_blk[(i, i)] += C64::new(1.0, 0.0);
        }
        x_blk /= C64::new(g, 0.0);
        let re_trace = |m: &DMatrix<C64>| (0..m.nrows()).map(|i| m[(i, i)].re).sum::<f64>();
        // Re tr(A B) without forming the product
        let re_tr_prod = |a: &DMatrix<C64>, b: &DMatrix<C64>| {
            let mut acc = 0.0;
            for i in 0..a.nrows() {
                for k in 0..a.ncols() {
                    acc += (a[(i, k)] * b[(k, i)]).re;
                }
            }
            acc
        };
        let y_adj = y.adjoint();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        grad[self.gamma] = -(re_trace(&x_blk) + re_trace(&z));
        for (j, d) in &self.coeffs {
            grad[*j] -= 2.0 * re_tr_prod(&y_adj, d);
        }
        if with_hessian {
            let fro = |m: &DMatrix<C64>| m.norm_squared();
            hess[(self.gamma, self.gamma)] = fro(&x_blk) + 2.0 * fro(&y) + fro(&z);
            let t21 = &y_adj * &x_blk + &z * &y_adj;
            let pa: Vec<DMatrix<C64>> = self.coeffs.iter().map(|(_, d)| &y_adj * d).collect();
            let qa: Vec<DMatrix<C64>> = self.coeffs.iter().map(|(_, d)| &x_blk * d * &z).collect();
            for (a, (ja, da)) in self.coeffs.iter().enumerate() {
                let hg = 2.0 * re_tr_prod(&t21, da);
                hess[(self.gamma, *ja)] += hg;
                hess[(*ja, self.gamma)] += hg;
                for (b, (jb, db)) in self.coeffs.iter().enumerate().skip(a) {
                    let cross: f64 = qa[a].iter().zip(db.iter()).map(|(u, v)| (u * v.conj()).re).sum();
                    let h = 2.0 * (re_tr_prod(&pa[a], &pa[b]) + cross);
                    hess[(*ja, *jb)] += h;
                    if ja != jb {
                        hess[(*jb, *ja)] += h;
                    }
                }
            }
        }
        Some(BarrierTerms { value, grad, hess })
    }
}

#[derive(Clone, Debug)]
pub struct LmiProblem<B: BarrierBlock> {
    pub c: DVector<f64>,
    pub blocks: Vec<B>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    InfeasibleNumerics,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmiOptions {
    /// Target bound on the suboptimality `m / t`, in objective units.
    pub gap: f64,
    pub max_newton: usize,
    /// Barrier parameter growth per centering stage.
    pub growth: f64,
}

impl Default for LmiOptions {
    fn default() -> Self {
        Self {
            gap: 1e-8,
            max_newton: 400,
            growth: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmiSolution {
    pub x: DVector<f64>,
    pub status: LmiStatus,
    pub newton_steps: usize,
    /// Duality-gap bound `m / t` at exit.
    pub gap: f64,
    pub message: Option<String>,
}

pub type LmiStatus = SolveStatus;

impl<B: BarrierBlock> LmiProblem<B> {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    /// Barrier weight `m`: total block dimension plus finite box sides.
    fn barrier_degree(&self) -> f64 {
        let blocks: usize = self.blocks.iter().map(|b| b.dim()).sum();
        let sides = self.lower.iter().filter(|v| v.is_finite()).count()
            + self.upper.iter().filter(|v| v.is_finite()).count();
        (blocks + sides) as f64
    }

    fn inside_box(&self, x: &DVector<f64>) -> bool {
        (0..x.len()).all(|j| x[j] > self.lower[j] && x[j] < self.upper[j])
    }

    /// `-Σ log det S_i` only, or `None` outside the domain.
    fn barrier_value(&self, x: &DVector<f64>) -> Option<f64> {
        if !self.inside_box(x) {
            return None;
        }
        let mut v = box_value(x, &self.lower, &self.upper);
        for b in &self.blocks {
            v -= b.log_det(x)?;
        }
        Some(v)
    }

    fn barrier(&self, x: &DVector<f64>, with_hessian: bool) -> Option<BarrierTerms> {
        if !self.inside_box(x) {
            return None;
        }
        let n = x.len();
        let parts: Option<Vec<BarrierTerms>> = self
            .blocks
            .par_iter()
            .map(|b| b.terms(x, n, with_hessian))
            .collect();
        let mut total = BarrierTerms {
            value: box_value(x, &self.lower, &self.upper),
            grad: DVector::zeros(n),
            hess: DMatrix::zeros(n, n),
        };
        for j in 0..n {
            if self.lower[j].is_finite() {
                let d = x[j] - self.lower[j];
                total.grad[j] -= 1.0 / d;
                total.hess[(j, j)] += 1.0 / (d * d);
            }
            if self.upper[j].is_finite() {
                let d = self.upper[j] - x[j];
                total.grad[j] += 1.0 / d;
                total.hess[(j, j)] += 1.0 / (d * d);
            }
        }
        for p in parts? {
            total.value += p.value;
            total.grad += p.grad;
            if with_hessian {
                total.hess += p.hess;
            }
        }
        Some(total)
    }

    /// Minimizes from a strictly feasible `x0`.
    pub fn solve(&self, x0: &DVector<f64>, opts: &LmiOptions) -> LmiSolution {
        let m = self.barrier_degree().max(1.0);
        let mut x = x0.clone();
        let fail = |x: DVector<f64>, steps, gap, msg: String| LmiSolution {
            x,
            status: SolveStatus::InfeasibleNumerics,
            newton_steps: steps,
            gap,
            message: Some(msg),
        };
        if self.barrier_value(&x).is_none() {
            return fail(x, 0, f64::INFINITY, "starting point is not strictly feasible".into());
        }
        let mut t = 1.0;
        let mut steps = 0;
        loop {
            // centering
            let mut inner = 0;
            loop {
                if steps >= opts.max_newton {
                    return LmiSolution {
                        x,
                        status: SolveStatus::MaxIterations,
                        newton_steps: steps,
                        gap: m / t,
                        message: None,
                    };
                }
                let Some(b) = self.barrier(&x, true) else {
                    return fail(x, steps, m / t, "iterate left the barrier domain".into());
                };
                let grad = &self.c * t + &b.grad;
                let Some(dx) = newton_direction(&b.hess, &grad) else {
                    return fail(x, steps, m / t, "singular Newton system".into());
                };
                let decrement = -grad.dot(&dx);
                steps += 1;
                inner += 1;
                if decrement <= 1e-10 || !decrement.is_finite() {
                    break;
                }
                let f0 = t * self.c.dot(&x) + b.value;
                let mut alpha = 1.0;
                let mut moved = false;
                for _ in 0..60 {
                    let xn = &x + &dx * alpha;
                    if let Some(v) = self.barrier_value(&xn) {
                        if t * self.c.dot(&xn) + v <= f0 - 0.25 * alpha * decrement {
                            x = xn;
                            moved = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !moved {
                    // no descent possible at this accuracy; treat as centered
                    break;
                }
                if decrement <= 1e-9 || inner >= 80 {
                    break;
                }
            }
            if m / t <= opts.gap {
                return LmiSolution {
                    x,
                    status: SolveStatus::Optimal,
                    newton_steps: steps,
                    gap: m / t,
                    message: None,
                };
            }
            t *= opts.growth;
        }
    }
}

fn box_value(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> f64 {
    let mut v = 0.0;
    for j in 0..x.len() {
        if lower[j].is_finite() {
            v -= (x[j] - lower[j]).ln();
        }
        if upper[j].is_finite() {
            v -= (upper[j] - x[j]).ln();
        }
    }
    v
}

/// Cholesky factor of a Hermitian matrix, or `None` unless it is positive
/// definite. The complex square root never fails, so a negative pivot shows
/// up as a non-real diagonal entry of the factor rather than as an error.
pub fn hermitian_cholesky<T: ComplexField<RealField = f64>>(m: DMatrix<T>) -> Option<Cholesky<T, Dyn>> {
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    for i in 0..l.nrows() {
        let d = l[(i, i)].clone();
        let (re, im) = (d.clone().real(), d.imaginary());
        if !(re > 0.0) || !re.is_finite() || im.abs() > 1e-12 * re {
            return None;
        }
    }
    Some(chol)
}

fn log_det<T: ComplexField<RealField = f64>>(chol: &Cholesky<T, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| 2.0 * l[(i, i)].clone().real().ln()).sum()
}

fn block_barrier<T: ComplexField<RealField = f64>>(
    b: &LmiBlock<T>,
    x: &DVector<f64>,
    n: usize,
    with_hessian: bool,
) -> Option<BarrierTerms> {
    let chol = hermitian_cholesky(b.eval(x))?;
    let value = -log_det(&chol);
    let l = chol.l();
    // W_j = L⁻¹ F_j L⁻ᴴ, so tr(S⁻¹F_j) = tr(W_j) and tr(S⁻¹F_j S⁻¹F_k) = <W_j, W_k>.
    let w: Vec<(usize, DMatrix<T>)> = b
        .coeffs
        .iter()
        .enumerate()
        .filter_map(|(j, f)| {
            let f = f.as_ref()?;
            let y = l.solve_lower_triangular(f)?;
            let w = l.solve_lower_triangular(&y.adjoint())?.adjoint();
            Some((j, w))
        })
        .collect();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for (a, (j, wj)) in w.iter().enumerate() {
        grad[*j] = -(0..wj.nrows()).map(|i| wj[(i, i)].clone().real()).sum::<f64>();
        if with_hessian {
            for (k, wk) in &w[a..] {
                let h: f64 = wj
                    .iter()
                    .zip(wk.iter())
                    .map(|(p, q)| (p.clone() * q.clone().conjugate()).real())
                    .sum();
                hess[(*j, *k)] = h;
                hess[(*k, *j)] = h;
            }
        }
    }
    Some(BarrierTerms { value, grad, hess })
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = Cholesky::new(h.clone()) {
        return Some(-chol.solve(g));
    }
    // regularize a semidefinite Hessian
    let ridge = 1e-12 * h.diagonal().amax().max(1e-300);
    let mut hr = h.clone();
    for i in 0..hr.nrows() {
        hr[(i, i)] += ridge;
    }
    Cholesky::new(hr).map(|c| -c.solve(g))
}
