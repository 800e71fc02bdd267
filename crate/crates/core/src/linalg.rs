//! Dense kernels shared by the model, spectral and solver modules.

use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen, SVD};

pub type C64 = Complex<f64>;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 20_000;

/// Eigenvalues of a real square matrix via the real Schur form.
///
/// Returns `None` when the QR iteration fails to converge.
pub fn real_eigenvalues(a: &DMatrix<f64>) -> Option<Vec<C64>> {
    if a.nrows() == 0 {
        return Some(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), SCHUR_EPS, SCHUR_MAX_ITER)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest singular value of a complex matrix.
pub fn sigma_max(g: &DMatrix<C64>) -> f64 {
    match g.shape() {
        (0, _) | (_, 0) => 0.0,
        (1, _) | (_, 1) => g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        _ => SVD::new(g.clone(), false, false)
            .singular_values
            .iter()
            .copied()
            .fold(0.0, f64::max),
    }
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(h: &DMatrix<C64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(s.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

/// Solves `Aᵀ P + P A = -Q` for real `A` and symmetric `Q` by a complex
/// Bartels-Stewart sweep on the Schur form of `A`.
///
/// Returns `None` if the Schur iteration fails or `A` has eigenvalues with
/// `λ_i + conj(λ_j) ≈ 0` (the equation is then singular).
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let ac = to_complex(a);
    let schur = Schur::try_new(ac, SCHUR_EPS, SCHUR_MAX_ITER)?;
    let (u, t) = schur.unpack();
    // With A = U T U*:  T* X + X T = -U* Q U  where X = U* P U.
    let qt = u.adjoint() * to_complex(q) * &u;
    let mut x = DMatrix::<C64>::zeros(n, n);
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    for j in 0..n {
        for i in 0..n {
            let mut rhs = -qt[(i, j)];
            for k in 0..i {
                rhs -= t[(k, i)].conj() * x[(k, j)];
            }
            for k in 0..j {
                rhs -= x[(i, k)] * t[(k, j)];
            }
            let denom = t[(i, i)].conj() + t[(j, j)];
            if denom.norm() <= 1e-14 * scale {
                return None;
            }
            x[(i, j)] = rhs / denom;
        }
    }
    let p = &u * x * u.adjoint();
    let p = p.map(|z| z.re);
    Some((&p + p.transpose()) * 0.5)
}
