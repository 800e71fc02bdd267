//! Concrete parameter-to-matrix maps.

use std::fmt;

use nalgebra::DMatrix;

use super::ParameterMap;
use crate::expr::ExprMatrix;

type MatPair = (DMatrix<f64>, DMatrix<f64>);

/// `A(K)`, `B(K)` given entrywise as symbolic expressions. Jacobians are exact.
#[derive(Clone, Debug)]
pub struct ExprMap {
    a: ExprMatrix,
    b: ExprMatrix,
    da: Vec<ExprMatrix>,
    db: Vec<ExprMatrix>,
}

impl ExprMap {
    pub fn new(a: ExprMatrix, b: ExprMatrix, n_params: usize) -> Self {
        let da = (0..n_params).map(|l| a.derivative(l)).collect();
        let db = (0..n_params).map(|l| b.derivative(l)).collect();
        Self { a, b, da, db }
    }

    pub fn a(&self) -> &ExprMatrix {
        &self.a
    }

    pub fn b(&self) -> &ExprMatrix {
        &self.b
    }
}

impl ParameterMap for ExprMap {
    fn eval(&self, k: &[f64]) -> MatPair {
        (self.a.eval(k), self.b.eval(k))
    }

    fn jacobian(&self, k: &[f64]) -> Option<Vec<MatPair>> {
        Some(
            self.da
                .iter()
                .zip(&self.db)
                .map(|(da, db)| (da.eval(k), db.eval(k)))
                .collect(),
        )
    }
}

type EvalFn = dyn Fn(&[f64]) -> MatPair + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> Vec<MatPair> + Send + Sync;

/// Closure-backed map, optionally with a hand-written Jacobian.
pub struct FnMap {
    eval: Box<EvalFn>,
    jacobian: Option<Box<JacFn>>,
}

impl FnMap {
    pub fn new(eval: impl Fn(&[f64]) -> MatPair + Send + Sync + 'static) -> Self {
        Self {
            eval: Box::new(eval),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&[f64]) -> Vec<MatPair> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(jacobian));
        self
    }
}

impl fmt::Debug for FnMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnMap")
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl ParameterMap for FnMap {
    fn eval(&self, k: &[f64]) -> MatPair {
        (self.eval)(k)
    }

    fn jacobian(&self, k: &[f64]) -> Option<Vec<MatPair>> {
        self.jacobian.as_ref().map(|j| j(k))
    }
}
