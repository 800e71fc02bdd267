//! State-space realizations of rational transfer matrices with constant coefficients.

use nalgebra::DMatrix;

use super::{ModelError, ParametricStateSpace};

/// SISO rational function with real coefficients, highest power first.
#[derive(Clone, Debug, PartialEq)]
pub struct Rational {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl Rational {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Self {
        Self { num, den }
    }
}

fn trim(p: &[f64]) -> &[f64] {
    let first = p.iter().position(|&c| c != 0.0).unwrap_or(p.len());
    &p[first..]
}

/// Product of polynomials given highest power first.
pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Controllable canonical form `(A, B, C, D)` of a proper rational function.
pub fn controllable_canonical(
    r: &Rational,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64), ModelError> {
    let den = trim(&r.den);
    let num = trim(&r.num);
    if den.is_empty() {
        return Err(ModelError::InvalidParameters("zero denominator".into()));
    }
    let n = den.len() - 1;
    if num.len() > den.len() {
        return Err(ModelError::InvalidParameters("improper rational function".into()));
    }
    let lead = den[0];
    let a_coef: Vec<f64> = den[1..].iter().map(|c| c / lead).collect();
    let mut b_coef = vec![0.0; n + 1];
    for (i, c) in num.iter().enumerate() {
        b_coef[n + 1 - num.len() + i] = c / lead;
    }
    let d = b_coef[0];
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    let mut c = DMatrix::zeros(1, n);
    for j in 0..n {
        // coefficient of s^j
        a[(n - 1, j)] = -a_coef[n - 1 - j];
        c[(0, j)] = b_coef[n - j] - d * a_coef[n - 1 - j];
    }
    let mut b = DMatrix::zeros(n, 1);
    if n > 0 {
        b[(n - 1, 0)] = 1.0;
    }
    Ok((a, b, c, d))
}

/// Realizes a transfer matrix entrywise; the state is the concatenation of the
/// entry realizations, so the realization is minimal whenever distinct
/// entries share no poles and each entry is coprime.
pub fn realize_transfer_matrix(entries: &[Vec<Rational>]) -> Result<ParametricStateSpace, ModelError> {
    let n_y = entries.len();
    let n_w = entries.first().map_or(0, Vec::len);
    if entries.iter().any(|row| row.len() != n_w) {
        return Err(ModelError::Dimension("ragged transfer matrix".into()));
    }
    let mut parts = Vec::new();
    for (i, row) in entries.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            parts.push((i, j, controllable_canonical(r)?));
        }
    }
    let n_x: usize = parts.iter().map(|(_, _, p)| p.0.nrows()).sum();
    let mut a = DMatrix::zeros(n_x, n_x);
    let mut b = DMatrix::zeros(n_x, n_w);
    let mut c = DMatrix::zeros(n_y, n_x);
    let mut d = DMatrix::zeros(n_y, n_w);
    let mut off = 0;
    for (i, j, (pa, pb, pc, pd)) in parts {
        let m = pa.nrows();
        a.view_mut((off, off), (m, m)).copy_from(&pa);
        b.view_mut((off, j), (m, 1)).copy_from(&pb);
        c.view_mut((i, off), (1, m)).copy_from(&pc);
        d[(i, j)] = pd;
        off += m;
    }
    ParametricStateSpace::constant(a, b, c)?.with_feedthrough(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    fn eval_poly(p: &[f64], s: C64) -> C64 {
        p.iter().fold(C64::new(0.0, 0.0), |acc, &c| acc * s + c)
    }

    #[test]
    fn canonical_form_reproduces_rational_values() {
        let r = Rational::new(vec![1.0, 4.0, 10.0], vec![1.0, -1.0, 1.0]);
        let sys = realize_transfer_matrix(&[vec![r.clone()]]).unwrap();
        for s in [C64::new(0.3, 1.2), C64::new(-2.0, 0.1), C64::new(0.0, 0.0)] {
            let g = sys.frequency_response(&[], s).unwrap().g[(0, 0)];
            let expect = eval_poly(&r.num, s) / eval_poly(&r.den, s);
            assert!((g - expect).norm() < 1e-12, "{g} vs {expect}");
        }
    }

    #[test]
    fn non_monic_denominator() {
        let den = poly_mul(&[1.0, 1.0], &[2.0, -1.0]);
        assert_eq!(den, vec![2.0, 1.0, -1.0]);
        let r = Rational::new(vec![1.0, 4.0], den);
        let (a, _, c, d) = controllable_canonical(&r).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(a[(1, 0)], 0.5);
        assert_eq!(a[(1, 1)], -0.5);
        assert_eq!(c[(0, 0)], 2.0);
        assert_eq!(c[(0, 1)], 0.5);
    }

    #[test]
    fn improper_is_rejected() {
        assert!(controllable_canonical(&Rational::new(vec![1.0, 0.0, 0.0], vec![1.0, 1.0])).is_err());
    }
}
