//! Symbolic parameter-to-coefficient maps.
//!
//! Controller blocks (gains, lead-lag filters, washouts, first-order lags)
//! produce state-space coefficients that are Laurent polynomials in the tunable
//! parameters: time constants enter as reciprocals, gains as products. [`Expr`]
//! stores such a polynomial exactly, so evaluation and partial derivatives are
//! both exact and composition of blocks never freezes the dependency at a
//! particular parameter vector.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::DMatrix;

/// One monomial `coeff * Π k_i^e_i`. Powers are kept sorted by parameter index
/// and never contain a zero exponent.
#[derive(Clone, Debug, PartialEq)]
struct Term {
    coeff: f64,
    powers: Vec<(usize, i32)>,
}

impl Term {
    fn eval(&self, k: &[f64]) -> f64 {
        self.powers
            .iter()
            .fold(self.coeff, |acc, &(i, e)| acc * k[i].powi(e))
    }

    fn mul(&self, other: &Term) -> Term {
        let mut powers: BTreeMap<usize, i32> = self.powers.iter().copied().collect();
        for &(i, e) in &other.powers {
            *powers.entry(i).or_insert(0) += e;
        }
        Term {
            coeff: self.coeff * other.coeff,
            powers: powers.into_iter().filter(|&(_, e)| e != 0).collect(),
        }
    }
}

/// A Laurent polynomial in the parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Expr {
    terms: Vec<Term>,
}

impl Expr {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::from_terms(vec![Term {
            coeff: c,
            powers: Vec::new(),
        }])
    }

    /// The parameter `k[index]` itself.
    pub fn param(index: usize) -> Self {
        Self::from_terms(vec![Term {
            coeff: 1.0,
            powers: vec![(index, 1)],
        }])
    }

    fn from_terms(terms: Vec<Term>) -> Self {
        let mut merged: BTreeMap<Vec<(usize, i32)>, f64> = BTreeMap::new();
        for t in terms {
            *merged.entry(t.powers).or_insert(0.0) += t.coeff;
        }
        Self {
            terms: merged
                .into_iter()
                .filter(|(_, c)| *c != 0.0)
                .map(|(powers, coeff)| Term { coeff, powers })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Some(c)` when the expression does not depend on any parameter.
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [] => Some(0.0),
            [t] if t.powers.is_empty() => Some(t.coeff),
            _ => None,
        }
    }

    pub fn eval(&self, k: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(k)).sum()
    }

    pub fn depends_on(&self, index: usize) -> bool {
        self.terms
            .iter()
            .any(|t| t.powers.iter().any(|&(i, _)| i == index))
    }

    /// Exact partial derivative with respect to `k[index]`.
    pub fn derivative(&self, index: usize) -> Expr {
        let mut out = Vec::new();
        for t in &self.terms {
            if let Some(pos) = t.powers.iter().position(|&(i, _)| i == index) {
                let e = t.powers[pos].1;
                let mut powers = t.powers.clone();
                if e == 1 {
                    powers.remove(pos);
                } else {
                    powers[pos].1 = e - 1;
                }
                out.push(Term {
                    coeff: t.coeff * e as f64,
                    powers,
                });
            }
        }
        Self::from_terms(out)
    }

    /// Reciprocal of a single monomial. Sums have no Laurent-polynomial
    /// reciprocal and return `None`.
    pub fn recip(&self) -> Option<Expr> {
        match self.terms.as_slice() {
            [t] if t.coeff != 0.0 => Some(Self::from_terms(vec![Term {
                coeff: 1.0 / t.coeff,
                powers: t.powers.iter().map(|&(i, e)| (i, -e)).collect(),
            }])),
            _ => None,
        }
    }

    pub fn scale(&self, c: f64) -> Expr {
        Self::from_terms(
            self.terms
                .iter()
                .map(|t| Term {
                    coeff: t.coeff * c,
                    powers: t.powers.clone(),
                })
                .collect(),
        )
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::constant(c)
    }
}

impl Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        Expr::from_terms(self.terms.iter().chain(&rhs.terms).cloned().collect())
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        &self + &rhs
    }
}

impl AddAssign<&Expr> for Expr {
    fn add_assign(&mut self, rhs: &Expr) {
        *self = &*self + rhs;
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.scale(-1.0)
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.scale(-1.0)
    }
}

impl Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        self + &(-rhs)
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        &self - &rhs
    }
}

impl Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        let mut out = Vec::with_capacity(self.terms.len() * rhs.terms.len());
        for a in &self.terms {
            for b in &rhs.terms {
                out.push(a.mul(b));
            }
        }
        Expr::from_terms(out)
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        &self * &rhs
    }
}

impl Mul<f64> for &Expr {
    type Output = Expr;
    fn mul(self, rhs: f64) -> Expr {
        self.scale(rhs)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, t) in self.terms.iter().enumerate() {
            if n > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{}", t.coeff)?;
            for &(i, e) in &t.powers {
                if e == 1 {
                    write!(f, "*k{i}")?;
                } else {
                    write!(f, "*k{i}^{e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Sparse linear combination of variables with symbolic coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearForm {
    coeffs: BTreeMap<usize, Expr>,
}

impl LinearForm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(index: usize, coeff: impl Into<Expr>) -> Self {
        let mut f = Self::new();
        f.add_term(index, &coeff.into());
        f
    }

    pub fn add_term(&mut self, index: usize, coeff: &Expr) {
        let entry = self.coeffs.entry(index).or_default();
        *entry += coeff;
        if entry.is_zero() {
            self.coeffs.remove(&index);
        }
    }

    pub fn add(&self, other: &LinearForm) -> LinearForm {
        let mut out = self.clone();
        for (&i, c) in &other.coeffs {
            out.add_term(i, c);
        }
        out
    }

    pub fn scale(&self, c: &Expr) -> LinearForm {
        let mut out = LinearForm::new();
        for (&i, e) in &self.coeffs {
            out.add_term(i, &(e * c));
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Expr)> {
        self.coeffs.iter().map(|(&i, e)| (i, e))
    }

    pub fn coeff(&self, index: usize) -> Option<&Expr> {
        self.coeffs.get(&index)
    }
}

/// Sparse matrix of [`Expr`] entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprMatrix {
    nrows: usize,
    ncols: usize,
    entries: BTreeMap<(usize, usize), Expr>,
}

impl ExprMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: BTreeMap::new(),
        }
    }

    pub fn from_constant(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    out.set(i, j, Expr::constant(m[(i, j)]));
                }
            }
        }
        out
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn set(&mut self, row: usize, col: usize, value: Expr) {
        assert!(row < self.nrows && col < self.ncols, "index out of range");
        if value.is_zero() {
            self.entries.remove(&(row, col));
        } else {
            self.entries.insert((row, col), value);
        }
    }

    pub fn add_to(&mut self, row: usize, col: usize, value: &Expr) {
        let current = self.entries.get(&(row, col)).cloned().unwrap_or_default();
        self.set(row, col, &current + value);
    }

    pub fn get(&self, row: usize, col: usize) -> Expr {
        self.entries.get(&(row, col)).cloned().unwrap_or_default()
    }

    pub fn eval(&self, k: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (&(i, j), e) in &self.entries {
            m[(i, j)] = e.eval(k);
        }
        m
    }

    pub fn derivative(&self, index: usize) -> ExprMatrix {
        let mut out = Self::zeros(self.nrows, self.ncols);
        for (&(i, j), e) in &self.entries {
            if e.depends_on(index) {
                out.set(i, j, e.derivative(index));
            }
        }
        out
    }

    pub fn depends_on(&self, index: usize) -> bool {
        self.entries.values().any(|e| e.depends_on(index))
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }
}
