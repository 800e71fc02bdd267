//! First-order SISO controller blocks with parameter-dependent coefficients.

use crate::expr::{Expr, LinearForm};

/// `ẋ = a x + b u`, `y = c x + d u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBlock {
    pub name: &'static str,
    pub a: Expr,
    pub b: Expr,
    pub c: Expr,
    pub d: Expr,
}

fn recip(t: &Expr) -> Expr {
    t.recip().expect("time constants are single monomials")
}

impl LinearBlock {
    /// `k / (1 + s t)`.
    pub fn lag(name: &'static str, k: Expr, t: Expr) -> Self {
        let inv = recip(&t);
        Self {
            name,
            a: -&inv,
            b: &k * &inv,
            c: Expr::constant(1.0),
            d: Expr::zero(),
        }
    }

    /// `k s t / (1 + s t)`.
    pub fn washout(name: &'static str, k: Expr, t: Expr) -> Self {
        let inv = recip(&t);
        Self {
            name,
            a: -&inv,
            b: &k * &inv,
            c: Expr::constant(-1.0),
            d: k,
        }
    }

    /// `(1 + s t1) / (1 + s t2)`.
    pub fn lead_lag(name: &'static str, t1: Expr, t2: Expr) -> Self {
        let inv = recip(&t2);
        let ratio = &t1 * &inv;
        Self {
            name,
            a: -&inv,
            b: inv,
            c: &Expr::constant(1.0) - &ratio,
            d: ratio,
        }
    }
}

/// Wires a series chain of blocks whose states start at `first_state`.
///
/// Writes the state-derivative rows into `rows` and returns the chain output
/// as a linear form over the same variable space as `input`.
pub fn wire_chain(
    blocks: &[LinearBlock],
    first_state: usize,
    input: LinearForm,
    rows: &mut [LinearForm],
) -> LinearForm {
    let mut u = input;
    for (i, blk) in blocks.iter().enumerate() {
        let s = first_state + i;
        rows[s] = LinearForm::var(s, blk.a.clone()).add(&u.scale(&blk.b));
        u = LinearForm::var(s, blk.c.clone()).add(&u.scale(&blk.d));
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;

    fn tf(blk: &LinearBlock, k: &[f64], s: Complex<f64>) -> Complex<f64> {
        let (a, b, c, d) = (blk.a.eval(k), blk.b.eval(k), blk.c.eval(k), blk.d.eval(k));
        c * b / (s - a) + d
    }

    #[test]
    fn block_transfer_functions() {
        let s = Complex::new(0.3, 2.0);
        let k = [4.0, 0.5, 10.0, 0.2, 0.05];
        let lag = LinearBlock::lag("avr", Expr::param(0), Expr::param(1));
        assert!((tf(&lag, &k, s) - 4.0 / (1.0 + s * 0.5)).norm() < 1e-12);
        let wo = LinearBlock::washout("wo", Expr::param(0), Expr::param(2));
        assert!((tf(&wo, &k, s) - 4.0 * s * 10.0 / (1.0 + s * 10.0)).norm() < 1e-12);
        let ll = LinearBlock::lead_lag("ll", Expr::param(3), Expr::param(4));
        assert!((tf(&ll, &k, s) - (1.0 + s * 0.2) / (1.0 + s * 0.05)).norm() < 1e-12);
    }

    #[test]
    fn chain_output_is_product_of_stages() {
        let blocks = vec![
            LinearBlock::washout("wo", Expr::constant(2.0), Expr::constant(5.0)),
            LinearBlock::lead_lag("ll", Expr::constant(0.3), Expr::constant(0.1)),
        ];
        // input is variable 10; two states 0 and 1
        let mut rows = vec![LinearForm::new(); 2];
        let out = wire_chain(&blocks, 0, LinearForm::var(10, 1.0), &mut rows);
        let s = nalgebra::Complex::new(0.0, 1.5);
        let a = nalgebra::DMatrix::from_fn(2, 2, |i, j| rows[i].coeff(j).map_or(0.0, |e| e.eval(&[])));
        let b = nalgebra::DVector::from_fn(2, |i, _| rows[i].coeff(10).map_or(0.0, |e| e.eval(&[])));
        let c = nalgebra::RowDVector::from_fn(2, |_, j| out.coeff(j).map_or(0.0, |e| e.eval(&[])));
        let d = out.coeff(10).map_or(0.0, |e| e.eval(&[]));
        let m = nalgebra::DMatrix::<Complex<f64>>::identity(2, 2) * s - a.map(|x| Complex::new(x, 0.0));
        let x = m.lu().solve(&b.map(|x| Complex::new(x, 0.0))).unwrap();
        let g = (c.map(|x| Complex::new(x, 0.0)) * x)[(0, 0)] + d;
        let expect = 2.0 * s * 5.0 / (1.0 + s * 5.0) * (1.0 + s * 0.3) / (1.0 + s * 0.1);
        assert!((g - expect).norm() < 1e-12);
    }
}
