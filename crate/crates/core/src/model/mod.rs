//! Parametric linear systems `ẋ = A(K)x + B(K)w`, `y = Cx (+ Dw)`.
//!
//! A [`ParametricStateSpace`] is immutable and cheap to clone; evaluations at a
//! fixed parameter vector are grouped in an [`OperatingPoint`] so that the
//! eigenvalues needed for the near-pole guard are computed once and reused for
//! every frequency point.

pub mod maps;
pub mod realize;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExprMatrix;
use crate::linalg::{self, C64};
pub use maps::{ExprMap, FnMap};

/// Relative distance below which a frequency point counts as sitting on a pole.
pub const NEAR_POLE_GUARD: f64 = 1e-10;
/// Absolute tolerance for merging eigenvalues into one pole with multiplicity.
pub const MULTIPLICITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("parameter {index} = {value} outside [{lower}, {upper}]")]
    BoundsViolation {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("s = {s} lies within {distance:e} of eigenvalue {eigenvalue}")]
    NearSingular { s: C64, eigenvalue: C64, distance: f64 },
    #[error("eigenvalue iteration did not converge ({n}x{n} matrix, max |a_ij| = {max_abs:e})")]
    EigenFailure { n: usize, max_abs: f64 },
    #[error("invalid parameter vector: {0}")]
    InvalidParameters(String),
    #[error("linear solve failed at s = {0}")]
    SingularSolve(C64),
}

/// Tunable parameters with box bounds and per-component trust radii.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    values: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    trust_radius: DVector<f64>,
}

impl ParameterVector {
    pub fn new(
        values: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        trust_radius: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let n = values.len();
        if lower.len() != n || upper.len() != n || trust_radius.len() != n {
            return Err(ModelError::Dimension(format!(
                "values {n}, lower {}, upper {}, trust {}",
                lower.len(),
                upper.len(),
                trust_radius.len()
            )));
        }
        for i in 0..n {
            let (v, lo, hi) = (values[i], lower[i], upper[i]);
            if v.is_nan() || !(lo <= v && v <= hi) {
                return Err(ModelError::BoundsViolation {
                    index: i,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
            let r = trust_radius[i];
            if !(r > 0.0 && r.is_finite()) {
                return Err(ModelError::InvalidParameters(format!(
                    "trust radius {i} = {r} must be positive and finite"
                )));
            }
        }
        Ok(Self {
            values,
            lower,
            upper,
            trust_radius,
        })
    }

    /// Uses the default trust radii of [`ParameterVector::default_trust_radius`].
    pub fn with_default_trust(
        values: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, ModelError> {
        if lower.len() != values.len() || upper.len() != values.len() {
            return Err(ModelError::Dimension("bounds length".into()));
        }
        let r = Self::default_trust_radius(&values, &lower, &upper);
        Self::new(values, lower, upper, r)
    }

    /// `0.1 (upper - lower)`, where an infinite bound is replaced by a finite
    /// one at distance `10 |K0| + 1` from `K0`.
    pub fn default_trust_radius(
        values: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
    ) -> DVector<f64> {
        DVector::from_iterator(
            values.len(),
            (0..values.len()).map(|i| {
                let reach = 10.0 * values[i].abs() + 1.0;
                let lo = if lower[i].is_finite() { lower[i] } else { values[i] - reach };
                let hi = if upper[i].is_finite() { upper[i] } else { values[i] + reach };
                let r = 0.1 * (hi - lo);
                if r > 0.0 {
                    r
                } else {
                    0.1 * reach
                }
            }),
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn trust_radius(&self) -> &DVector<f64> {
        &self.trust_radius
    }

    pub fn with_values(&self, values: DVector<f64>) -> Result<Self, ModelError> {
        Self::new(values, self.lower.clone(), self.upper.clone(), self.trust_radius.clone())
    }

    pub fn with_trust_radius(&self, r: DVector<f64>) -> Result<Self, ModelError> {
        Self::new(self.values.clone(), self.lower.clone(), self.upper.clone(), r)
    }

    /// Box bounds intersected with the trust region around the current values.
    pub fn trust_box(&self) -> (DVector<f64>, DVector<f64>) {
        let lo = self
            .values
            .zip_zip_map(&self.trust_radius, &self.lower, |v, r, l| (v - r).max(l));
        let hi = self
            .values
            .zip_zip_map(&self.trust_radius, &self.upper, |v, r, u| (v + r).min(u));
        (lo, hi)
    }
}

/// Map from a parameter vector to the `(A, B)` pair of a state-space model.
pub trait ParameterMap: Send + Sync {
    fn eval(&self, k: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);

    /// Exact `(∂A/∂k_l, ∂B/∂k_l)` for every parameter, when available.
    fn jacobian(&self, _k: &[f64]) -> Option<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
        None
    }
}

/// Linear system whose `A` and `B` depend (possibly nonlinearly) on `K`.
#[derive(Clone)]
pub struct ParametricStateSpace {
    n_x: usize,
    n_w: usize,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    names: Vec<String>,
    map: Arc<dyn ParameterMap>,
}

impl fmt::Debug for ParametricStateSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricStateSpace")
            .field("n_x", &self.n_x)
            .field("n_w", &self.n_w)
            .field("n_y", &self.c.nrows())
            .field("n_k", &self.names.len())
            .finish()
    }
}

impl ParametricStateSpace {
    pub fn new(
        n_x: usize,
        n_w: usize,
        c: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        map: Arc<dyn ParameterMap>,
    ) -> Result<Self, ModelError> {
        if c.ncols() != n_x {
            return Err(ModelError::Dimension(format!(
                "C has {} columns, expected n_x = {n_x}",
                c.ncols()
            )));
        }
        if lower.len() != upper.len() {
            return Err(ModelError::Dimension("lower/upper length".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(ModelError::InvalidParameters(format!(
                "bounds of parameter {i}: lower {} > upper {}",
                lower[i], upper[i]
            )));
        }
        let n_y = c.nrows();
        let names = (0..lower.len()).map(|i| format!("k{i}")).collect();
        Ok(Self {
            n_x,
            n_w,
            c,
            d: DMatrix::zeros(n_y, n_w),
            lower,
            upper,
            names,
            map,
        })
    }

    /// Symbolic `A(K)`, `B(K)`; analytic sensitivities are available.
    pub fn from_exprs(
        a: ExprMatrix,
        b: ExprMatrix,
        c: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let (n_x, cols) = a.shape();
        if cols != n_x || b.shape().0 != n_x {
            return Err(ModelError::Dimension(format!(
                "A is {:?}, B is {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let n_w = b.shape().1;
        let n_k = lower.len();
        Self::new(n_x, n_w, c, lower, upper, Arc::new(ExprMap::new(a, b, n_k)))
    }

    /// Parameter-free system.
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, ModelError> {
        Self::from_exprs(
            ExprMatrix::from_constant(&a),
            ExprMatrix::from_constant(&b),
            c,
            DVector::zeros(0),
            DVector::zeros(0),
        )
    }

    /// Constant feedthrough `D` (default zero).
    pub fn with_feedthrough(mut self, d: DMatrix<f64>) -> Result<Self, ModelError> {
        if d.shape() != (self.n_y(), self.n_w) {
            return Err(ModelError::Dimension(format!(
                "D is {:?}, expected {:?}",
                d.shape(),
                (self.n_y(), self.n_w)
            )));
        }
        self.d = d;
        Ok(self)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self, ModelError> {
        if names.len() != self.n_params() {
            return Err(ModelError::Dimension(format!(
                "{} names for {} parameters",
                names.len(),
                self.n_params()
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.lower.len()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Parameter vector at `k` with this system's bounds and default trust radii.
    pub fn parameter_vector(&self, k: &DVector<f64>) -> Result<ParameterVector, ModelError> {
        if k.len() != self.n_params() {
            return Err(ModelError::Dimension(format!(
                "K has length {}, expected {}",
                k.len(),
                self.n_params()
            )));
        }
        ParameterVector::with_default_trust(k.clone(), self.lower.clone(), self.upper.clone())
    }

    pub fn check_bounds(&self, k: &[f64]) -> Result<(), ModelError> {
        if k.len() != self.n_params() {
            return Err(ModelError::Dimension(format!(
                "K has length {}, expected {}",
                k.len(),
                self.n_params()
            )));
        }
        for (i, &v) in k.iter().enumerate() {
            if v.is_nan() || v < self.lower[i] || v > self.upper[i] {
                return Err(ModelError::BoundsViolation {
                    index: i,
                    value: v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    fn eval_raw(&self, k: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
        let (a, b) = self.map.eval(k);
        if a.shape() != (self.n_x, self.n_x) || b.shape() != (self.n_x, self.n_w) {
            return Err(ModelError::Dimension(format!(
                "map returned A {:?}, B {:?}",
                a.shape(),
                b.shape()
            )));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite { what: "A(K)" });
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite { what: "B(K)" });
        }
        Ok((a, b))
    }

    /// `(A(K), B(K))`; bounds are inclusive.
    pub fn eval_state_space(&self, k: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
        self.check_bounds(k)?;
        self.eval_raw(k)
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        let k: Vec<f64> = (0..self.n_params())
            .map(|i| clamp_finite(0.0, self.lower[i], self.upper[i]))
            .collect();
        self.map.jacobian(&k).is_some()
    }

    /// `(∂A/∂K_l, ∂B/∂K_l)` for every parameter: analytic when the map
    /// provides it, otherwise central differences (one-sided at a bound).
    pub fn state_space_jacobian(&self, k: &[f64]) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>, ModelError> {
        self.check_bounds(k)?;
        if let Some(j) = self.map.jacobian(k) {
            return Ok(j);
        }
        (0..self.n_params())
            .map(|l| {
                let h = (1e-6 * k[l].abs()).max(1e-6);
                let (kp, km) = (
                    (k[l] + h).min(self.upper[l]),
                    (k[l] - h).max(self.lower[l]),
                );
                let mut plus = k.to_vec();
                let mut minus = k.to_vec();
                plus[l] = kp;
                minus[l] = km;
                let (ap, bp) = self.eval_raw(&plus)?;
                let (am, bm) = self.eval_raw(&minus)?;
                let w = kp - km;
                Ok(((ap - am) / w, (bp - bm) / w))
            })
            .collect()
    }

    /// Eigenvalues of `A(K)` with multiplicities, sorted by descending real part.
    pub fn compute_poles(&self, k: &[f64]) -> Result<PoleSet, ModelError> {
        let (a, _) = self.eval_state_space(k)?;
        poles_of(&a)
    }

    /// Evaluates `A`, `B` and the poles once for repeated frequency queries.
    pub fn at(&self, k: &[f64]) -> Result<OperatingPoint<'_>, ModelError> {
        let (a, b) = self.eval_state_space(k)?;
        let poles = poles_of(&a)?;
        Ok(OperatingPoint {
            sys: self,
            k: k.to_vec(),
            a,
            b,
            poles,
        })
    }

    pub fn frequency_response(&self, k: &[f64], s: C64) -> Result<TransferSample, ModelError> {
        self.at(k)?.response(s)
    }

    pub fn linearize_response(
        &self,
        k0: &[f64],
        s: C64,
        method: SensitivityMethod,
    ) -> Result<LinearizedResponse, ModelError> {
        self.at(k0)?.linearize(s, method)
    }
}

fn clamp_finite(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

pub(crate) fn poles_of(a: &DMatrix<f64>) -> Result<PoleSet, ModelError> {
    let ev = linalg::real_eigenvalues(a).ok_or_else(|| ModelError::EigenFailure {
        n: a.nrows(),
        max_abs: a.amax(),
    })?;
    Ok(PoleSet::from_eigenvalues(&ev, MULTIPLICITY_TOL))
}

/// How the parameter sensitivities of `G(K, s)` are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum SensitivityMethod {
    /// Analytic when the map provides Jacobians, central differences otherwise.
    #[default]
    Auto,
    Analytic,
    /// Central differences. `None` uses `max(1e-6, 1e-6 |k_l|)`.
    CentralDifference { step: Option<f64> },
}

/// The method that was actually used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityKind {
    Analytic,
    CentralDifference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferSample {
    pub s: C64,
    pub g: DMatrix<C64>,
}

/// First-order model `G_L(K, s) = G(K0, s) + Σ (K_l - K0_l) D_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedResponse {
    pub base_k: DVector<f64>,
    pub s: C64,
    pub base_g: DMatrix<C64>,
    pub sensitivities: Vec<DMatrix<C64>>,
    pub method: SensitivityKind,
}

impl LinearizedResponse {
    pub fn eval(&self, k: &[f64]) -> DMatrix<C64> {
        let mut g = self.base_g.clone();
        for (l, d) in self.sensitivities.iter().enumerate() {
            let dk = k[l] - self.base_k[l];
            if dk != 0.0 {
                g += d * C64::new(dk, 0.0);
            }
        }
        g
    }

    pub fn n_params(&self) -> usize {
        self.sensitivities.len()
    }
}

/// `A(K)`, `B(K)` and the poles at one parameter vector.
pub struct OperatingPoint<'a> {
    sys: &'a ParametricStateSpace,
    k: Vec<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    poles: PoleSet,
}

impl<'a> OperatingPoint<'a> {
    pub fn system(&self) -> &'a ParametricStateSpace {
        self.sys
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn poles(&self) -> &PoleSet {
        &self.poles
    }

    /// Closest eigenvalue of `A` to `s` and its distance.
    pub fn nearest_pole(&self, s: C64) -> Option<(C64, f64)> {
        self.poles
            .iter()
            .map(|p| (p.value, (s - p.value).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
    }

    fn guard(&self, s: C64) -> Result<(), ModelError> {
        if let Some((eigenvalue, distance)) = self.nearest_pole(s) {
            if distance < NEAR_POLE_GUARD * (1.0 + s.norm()) {
                return Err(ModelError::NearSingular { s, eigenvalue, distance });
            }
        }
        Ok(())
    }

    fn shifted(&self, s: C64) -> DMatrix<C64> {
        let n = self.a.nrows();
        let mut m = self.a.map(|x| C64::new(-x, 0.0));
        for i in 0..n {
            m[(i, i)] += s;
        }
        m
    }

    /// `G(s) = C (sI - A)^{-1} B + D` by an LU solve.
    pub fn response(&self, s: C64) -> Result<TransferSample, ModelError> {
        self.guard(s)?;
        let g = resolvent_product(&self.a, &self.b, self.sys, s)?;
        Ok(TransferSample { s, g })
    }

    pub fn linearize(&self, s: C64, method: SensitivityMethod) -> Result<LinearizedResponse, ModelError> {
        let mut out = self.linearize_many(&[s], method)?;
        Ok(out.pop().expect("one sample"))
    }

    /// Linearized responses at several points; the points are processed in parallel.
    pub fn linearize_many(
        &self,
        points: &[C64],
        method: SensitivityMethod,
    ) -> Result<Vec<LinearizedResponse>, ModelError> {
        for &s in points {
            self.guard(s)?;
        }
        let jac = match method {
            SensitivityMethod::CentralDifference { .. } => None,
            SensitivityMethod::Auto | SensitivityMethod::Analytic => self.sys.map.jacobian(&self.k),
        };
        match (jac, method) {
            (Some(jac), _) => self.linearize_analytic(points, &jac),
            (None, SensitivityMethod::Analytic) => Err(ModelError::InvalidParameters(
                "analytic sensitivities requested but the parameter map has no Jacobian".into(),
            )),
            (None, SensitivityMethod::CentralDifference { step }) => self.linearize_fd(points, step),
            (None, _) => self.linearize_fd(points, None),
        }
    }

    fn linearize_analytic(
        &self,
        points: &[C64],
        jac: &[(DMatrix<f64>, DMatrix<f64>)],
    ) -> Result<Vec<LinearizedResponse>, ModelError> {
        let n_y = self.sys.n_y();
        let n_w = self.sys.n_w();
        let c = linalg::to_complex(&self.sys.c);
        let bc = linalg::to_complex(&self.b);
        let dc = linalg::to_complex(&self.sys.d);
        let jac_c: Vec<Option<(DMatrix<C64>, DMatrix<C64>)>> = jac
            .iter()
            .map(|(da, db)| {
                if da.iter().all(|&x| x == 0.0) && db.iter().all(|&x| x == 0.0) {
                    None
                } else {
                    Some((linalg::to_complex(da), linalg::to_complex(db)))
                }
            })
            .collect();
        points
            .par_iter()
            .map(|&s| {
                let m = self.shifted(s);
                let x = m
                    .clone()
                    .lu()
                    .solve(&bc)
                    .ok_or(ModelError::SingularSolve(s))?;
                let yt = m
                    .transpose()
                    .lu()
                    .solve(&c.transpose())
                    .ok_or(ModelError::SingularSolve(s))?;
                let y = yt.transpose();
                let base_g = &c * &x + &dc;
                let sensitivities = jac_c
                    .iter()
                    .map(|entry| match entry {
                        None => DMatrix::zeros(n_y, n_w),
                        Some((da, db)) => &y * (da * &x + db),
                    })
                    .collect();
                Ok(LinearizedResponse {
                    base_k: DVector::from_column_slice(&self.k),
                    s,
                    base_g,
                    sensitivities,
                    method: SensitivityKind::Analytic,
                })
            })
            .collect()
    }

    fn linearize_fd(&self, points: &[C64], step: Option<f64>) -> Result<Vec<LinearizedResponse>, ModelError> {
        let sys = self.sys;
        let n_k = sys.n_params();
        // (A, B) at the perturbed points, with the effective step and divisor.
        let mut perturbed = Vec::with_capacity(n_k);
        for l in 0..n_k {
            let kl = self.k[l];
            let h = step.unwrap_or_else(|| (1e-6 * kl.abs()).max(1e-6));
            let (up, down) = (kl + h <= sys.upper[l], kl - h >= sys.lower[l]);
            let (kp, km) = match (up, down) {
                (true, true) | (false, false) => (kl + h, kl - h),
                (true, false) => (kl + h, kl),
                (false, true) => (kl, kl - h),
            };
            let mut k_plus = self.k.clone();
            let mut k_minus = self.k.clone();
            k_plus[l] = kp;
            k_minus[l] = km;
            let plus = sys.eval_raw(&k_plus)?;
            let minus = sys.eval_raw(&k_minus)?;
            perturbed.push((plus, minus, kp - km));
        }
        points
            .par_iter()
            .map(|&s| {
                let base_g = resolvent_product(&self.a, &self.b, sys, s)?;
                let mut sensitivities = Vec::with_capacity(n_k);
                for ((ap, bp), (am, bm), width) in &perturbed {
                    let gp = resolvent_product(ap, bp, sys, s)?;
                    let gm = resolvent_product(am, bm, sys, s)?;
                    sensitivities.push((gp - gm) / C64::new(*width, 0.0));
                }
                Ok(LinearizedResponse {
                    base_k: DVector::from_column_slice(&self.k),
                    s,
                    base_g,
                    sensitivities,
                    method: SensitivityKind::CentralDifference,
                })
            })
            .collect()
    }
}

fn resolvent_product(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sys: &ParametricStateSpace,
    s: C64,
) -> Result<DMatrix<C64>, ModelError> {
    let n = a.nrows();
    let mut m = a.map(|x| C64::new(-x, 0.0));
    for i in 0..n {
        m[(i, i)] += s;
    }
    let x = m
        .lu()
        .solve(&linalg::to_complex(b))
        .ok_or(ModelError::SingularSolve(s))?;
    Ok(linalg::to_complex(&sys.c) * x + linalg::to_complex(&sys.d))
}

/// One distinct pole and its algebraic multiplicity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub value: C64,
    pub multiplicity: usize,
}

/// Eigenvalues of `A(K)` clustered into distinct poles.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PoleSet {
    poles: Vec<Pole>,
}

impl PoleSet {
    /// Clusters eigenvalues closer than `tol` (single linkage) and sorts the
    /// clusters by descending real part, ties by descending imaginary part.
    pub fn from_eigenvalues(eigenvalues: &[C64], tol: f64) -> Self {
        let n = eigenvalues.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (eigenvalues[i] - eigenvalues[j]).norm() <= tol {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        let mut clusters: Vec<(C64, usize)> = Vec::new();
        let mut root_slot = vec![usize::MAX; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if root_slot[r] == usize::MAX {
                root_slot[r] = clusters.len();
                clusters.push((C64::new(0.0, 0.0), 0));
            }
            let slot = &mut clusters[root_slot[r]];
            slot.0 += eigenvalues[i];
            slot.1 += 1;
        }
        let mut poles: Vec<Pole> = clusters
            .into_iter()
            .map(|(sum, m)| Pole {
                value: sum / m as f64,
                multiplicity: m,
            })
            .collect();
        poles.sort_by(|a, b| {
            b.value
                .re
                .total_cmp(&a.value.re)
                .then(b.value.im.total_cmp(&a.value.im))
        });
        Self { poles }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pole> {
        self.poles.iter()
    }

    pub fn len(&self) -> usize {
        self.poles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty()
    }

    /// Total count including multiplicities.
    pub fn count_with_multiplicity(&self) -> usize {
        self.poles.iter().map(|p| p.multiplicity).sum()
    }

    /// Every pole repeated by its multiplicity.
    pub fn expanded(&self) -> Vec<C64> {
        self.poles
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.value, p.multiplicity))
            .collect()
    }

    pub fn max_real(&self) -> f64 {
        self.poles.first().map_or(f64::NEG_INFINITY, |p| p.value.re)
    }

    /// Pole with the largest real part, choosing the upper half-plane member
    /// of a conjugate pair.
    pub fn rightmost(&self) -> Option<C64> {
        let first = self.poles.first()?;
        Some(C64::new(first.value.re, first.value.im.abs()))
    }

    /// Number of poles (with multiplicity) in the closed right half-plane.
    pub fn unstable_count(&self) -> usize {
        self.poles
            .iter()
            .filter(|p| p.value.re >= 0.0)
            .map(|p| p.multiplicity)
            .sum()
    }

    /// Largest pairwise distance between poles along either axis.
    pub fn spread(&self) -> f64 {
        if self.poles.is_empty() {
            return 0.0;
        }
        let (mut re_lo, mut re_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut im_lo, mut im_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.poles {
            re_lo = re_lo.min(p.value.re);
            re_hi = re_hi.max(p.value.re);
            im_lo = im_lo.min(p.value.im);
            im_hi = im_hi.max(p.value.im);
        }
        (re_hi - re_lo).max(im_hi - im_lo)
    }
}

/// Local model `σ̄(G(s)) ≈ a / |s - s_p|^{n_p}` near a pole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleLocalModel {
    pub pole: C64,
    pub multiplicity: u32,
    pub amplitude: f64,
}

impl PoleLocalModel {
    pub fn new(pole: C64, multiplicity: u32, amplitude: f64) -> Result<Self, ModelError> {
        if multiplicity < 1 || !(amplitude >= 0.0) {
            return Err(ModelError::InvalidParameters(format!(
                "pole local model needs n_p >= 1 and a >= 0 (got {multiplicity}, {amplitude})"
            )));
        }
        Ok(Self {
            pole,
            multiplicity,
            amplitude,
        })
    }

    pub fn sigma(&self, s: C64) -> f64 {
        self.amplitude / (s - self.pole).norm().powi(self.multiplicity as i32)
    }
}

/// Fitted log-log behaviour of `σ̄(G)` along a ray towards a pole.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoleAsymptote {
    /// Least-squares slope of `log σ̄` against `log |s - s_p|`.
    pub slope: f64,
    /// `exp` of the fitted intercept: the amplitude `a`.
    pub amplitude: f64,
}

impl PoleAsymptote {
    /// Rounds the slope to the nearest multiplicity.
    pub fn local_model(&self, pole: C64) -> Result<PoleLocalModel, ModelError> {
        let n_p = (-self.slope).round().max(1.0) as u32;
        PoleLocalModel::new(pole, n_p, self.amplitude)
    }
}

/// Fits `log σ̄(G(s_p + r e^{jφ}))` against `log r` on `radii`.
pub fn fit_pole_asymptote(
    op: &OperatingPoint<'_>,
    pole: C64,
    direction: C64,
    radii: &[f64],
) -> Result<PoleAsymptote, ModelError> {
    let dir = direction / direction.norm();
    let mut xs = Vec::with_capacity(radii.len());
    let mut ys = Vec::with_capacity(radii.len());
    for &r in radii {
        let sample = op.response(pole + dir * r)?;
        xs.push(r.ln());
        ys.push(linalg::sigma_max(&sample.g).ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(PoleAsymptote {
        slope,
        amplitude: (my - slope * mx).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    fn scalar_system() -> ParametricStateSpace {
        // A(K) = -K, B = C = 1, K in [1, 3]
        let mut a = ExprMatrix::zeros(1, 1);
        a.set(0, 0, -Expr::param(0));
        let b = ExprMatrix::from_constant(&DMatrix::from_element(1, 1, 1.0));
        ParametricStateSpace::from_exprs(
            a,
            b,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 3.0),
        )
        .unwrap()
    }

    #[test]
    fn eval_scalar_and_inclusive_bounds() {
        let sys = scalar_system();
        let (a, b) = sys.eval_state_space(&[2.0]).unwrap();
        assert_eq!(a[(0, 0)], -2.0);
        assert_eq!(b[(0, 0)], 1.0);
        assert!(sys.eval_state_space(&[0.5]).is_ok());
        assert!(matches!(
            sys.eval_state_space(&[0.4]),
            Err(ModelError::BoundsViolation { index: 0, .. })
        ));
    }

    #[test]
    fn non_finite_entries_are_reported() {
        let map = FnMap::new(|k| {
            (
                DMatrix::from_element(1, 1, 1.0 / k[0]),
                DMatrix::from_element(1, 1, 1.0),
            )
        });
        let sys = ParametricStateSpace::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
            Arc::new(map),
        )
        .unwrap();
        assert_eq!(
            sys.eval_state_space(&[0.0]),
            Err(ModelError::NonFinite { what: "A(K)" })
        );
    }

    #[test]
    fn frequency_response_first_order() {
        let sys = ParametricStateSpace::constant(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let g = sys.frequency_response(&[], C64::new(0.0, 1.0)).unwrap().g;
        assert!((g[(0, 0)] - C64::new(0.5, -0.5)).norm() < 1e-15);
        let g0 = sys.frequency_response(&[], C64::new(0.0, 0.0)).unwrap().g;
        assert!((g0[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn near_singular_guard_names_the_eigenvalue() {
        let sys = ParametricStateSpace::constant(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        match sys.frequency_response(&[], C64::new(-1.0, 0.0)) {
            Err(ModelError::NearSingular { eigenvalue, .. }) => {
                assert!((eigenvalue - C64::new(-1.0, 0.0)).norm() < 1e-12)
            }
            other => panic!("expected near-singular error, got {other:?}"),
        }
        // just outside the guard radius is fine
        assert!(sys.frequency_response(&[], C64::new(-1.0 + 1e-8, 0.0)).is_ok());
    }

    #[test]
    fn scalar_sensitivity_matches_resolvent_derivative() {
        let sys = scalar_system();
        let lin = sys
            .linearize_response(&[1.0], C64::new(0.0, 0.0), SensitivityMethod::Auto)
            .unwrap();
        assert_eq!(lin.method, SensitivityKind::Analytic);
        assert!((lin.base_g[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((lin.sensitivities[0][(0, 0)] - C64::new(-1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn unused_parameter_has_zero_sensitivity() {
        let mut a = ExprMatrix::zeros(1, 1);
        a.set(0, 0, -Expr::param(0));
        let b = ExprMatrix::from_constant(&DMatrix::from_element(1, 1, 1.0));
        let sys = ParametricStateSpace::from_exprs(
            a,
            b,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_vec(vec![0.5, -1.0]),
            DVector::from_vec(vec![3.0, 1.0]),
        )
        .unwrap();
        for method in [
            SensitivityMethod::Analytic,
            SensitivityMethod::CentralDifference { step: None },
        ] {
            let lin = sys
                .linearize_response(&[1.0, 0.2], C64::new(0.3, 1.0), method)
                .unwrap();
            assert!(lin.sensitivities[1].iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn analytic_request_without_jacobian_fails() {
        let map = FnMap::new(|k| {
            (
                DMatrix::from_element(1, 1, -k[0]),
                DMatrix::from_element(1, 1, 1.0),
            )
        });
        let sys = ParametricStateSpace::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 2.0),
            Arc::new(map),
        )
        .unwrap();
        assert!(!sys.has_analytic_jacobian());
        assert!(sys
            .linearize_response(&[1.0], C64::new(0.0, 0.0), SensitivityMethod::Analytic)
            .is_err());
        let lin = sys
            .linearize_response(&[1.0], C64::new(0.0, 0.0), SensitivityMethod::Auto)
            .unwrap();
        assert_eq!(lin.method, SensitivityKind::CentralDifference);
        assert!((lin.sensitivities[0][(0, 0)].re + 1.0).abs() < 1e-6);
    }

    #[test]
    fn one_sided_difference_at_a_bound() {
        let sys = scalar_system();
        let lin = sys
            .linearize_response(
                &[3.0],
                C64::new(0.0, 0.0),
                SensitivityMethod::CentralDifference { step: None },
            )
            .unwrap();
        // d/dK 1/K at K=3
        assert!((lin.sensitivities[0][(0, 0)].re + 1.0 / 9.0).abs() < 1e-5);
    }

    #[test]
    fn poles_of_diagonal_matrix() {
        let sys = ParametricStateSpace::constant(
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])),
            DMatrix::identity(2, 1),
            DMatrix::identity(1, 2),
        )
        .unwrap();
        let poles = sys.compute_poles(&[]).unwrap();
        let v: Vec<C64> = poles.expanded();
        assert_eq!(v.len(), 2);
        assert!((v[0] - C64::new(-1.0, 0.0)).norm() < 1e-12);
        assert!((v[1] - C64::new(-2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn multiplicity_clustering() {
        let ev = [
            C64::new(-1.0, 0.0),
            C64::new(-1.0 + 5e-8, 0.0),
            C64::new(-2.0, 1.0),
            C64::new(-2.0, -1.0),
        ];
        let ps = PoleSet::from_eigenvalues(&ev, MULTIPLICITY_TOL);
        assert_eq!(ps.len(), 3);
        assert_eq!(ps.count_with_multiplicity(), 4);
        assert_eq!(ps.iter().next().unwrap().multiplicity, 2);
        assert!((ps.rightmost().unwrap().re - (-1.0 + 2.5e-8)).abs() < 1e-15);
        assert_eq!(ps.unstable_count(), 0);
    }

    #[test]
    fn parameter_vector_invariants() {
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let lo = DVector::from_vec(vec![0.0, f64::NEG_INFINITY]);
        let hi = DVector::from_vec(vec![2.0, f64::INFINITY]);
        let p = ParameterVector::with_default_trust(v.clone(), lo.clone(), hi.clone()).unwrap();
        assert!((p.trust_radius()[0] - 0.2).abs() < 1e-15);
        // infinite bounds: 0.1 * 2 * (10|0| + 1)
        assert!((p.trust_radius()[1] - 0.2).abs() < 1e-15);
        assert!(ParameterVector::new(
            DVector::from_vec(vec![3.0, 0.0]),
            lo.clone(),
            hi.clone(),
            DVector::from_element(2, 1.0)
        )
        .is_err());
        assert!(ParameterVector::new(v, lo, hi, DVector::from_vec(vec![1.0, 0.0])).is_err());
    }

    #[test]
    fn local_model_requires_positive_multiplicity() {
        assert!(PoleLocalModel::new(C64::new(0.0, 0.0), 0, 1.0).is_err());
        assert!(PoleLocalModel::new(C64::new(0.0, 0.0), 1, -1.0).is_err());
        let m = PoleLocalModel::new(C64::new(1.0, 0.0), 2, 3.0).unwrap();
        assert!((m.sigma(C64::new(1.1, 0.0)) - 300.0).abs() < 1e-9);
    }
}
