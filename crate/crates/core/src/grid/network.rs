//! Bus admittance data and the polar power-flow equations.

use nalgebra::{DMatrix, DVector};

use super::GridError;

/// What is attached to a bus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BusKind {
    Dynamic,
    Static,
    Passive,
}

/// Conductance and susceptance matrices of the grid, `Y = G + jB`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridNetwork {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub kinds: Vec<BusKind>,
}

/// Partial derivatives of the injections with respect to angles and magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionJacobian {
    pub dp_dtheta: DMatrix<f64>,
    pub dp_dv: DMatrix<f64>,
    pub dq_dtheta: DMatrix<f64>,
    pub dq_dv: DMatrix<f64>,
}

impl GridNetwork {
    pub fn new(g: DMatrix<f64>, b: DMatrix<f64>, kinds: Vec<BusKind>) -> Result<Self, GridError> {
        let n = kinds.len();
        if g.shape() != (n, n) || b.shape() != (n, n) {
            return Err(GridError::Shape(format!(
                "admittance is {:?}/{:?} for {n} buses",
                g.shape(),
                b.shape()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                let scale = 1.0 + g[(i, j)].abs().max(b[(i, j)].abs());
                if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * scale
                    || (b[(i, j)] - b[(j, i)]).abs() > 1e-12 * scale
                {
                    return Err(GridError::Validation(format!(
                        "admittance matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { g, b, kinds })
    }

    pub fn n_buses(&self) -> usize {
        self.kinds.len()
    }

    fn check(&self, v: &DVector<f64>, theta: &DVector<f64>) -> Result<(), GridError> {
        let n = self.n_buses();
        if v.len() != n || theta.len() != n {
            return Err(GridError::Shape(format!(
                "V has length {}, theta {}, expected {n}",
                v.len(),
                theta.len()
            )));
        }
        Ok(())
    }

    /// Injected active and reactive power at every bus.
    pub fn compute_injections(
        &self,
        v: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), GridError> {
        self.check(v, theta)?;
        let n = self.n_buses();
        let mut p = DVector::zeros(n);
        let mut q = DVector::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let (gij, bij) = (self.g[(i, j)], self.b[(i, j)]);
                if gij == 0.0 && bij == 0.0 {
                    continue;
                }
                let (s, c) = (theta[i] - theta[j]).sin_cos();
                let vv = v[i] * v[j];
                p[i] += vv * (gij * c + bij * s);
                q[i] += vv * (gij * s - bij * c);
            }
        }
        Ok((p, q))
    }

    pub fn injection_jacobian(
        &self,
        v: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<InjectionJacobian, GridError> {
        let (p, q) = self.compute_injections(v, theta)?;
        let n = self.n_buses();
        let mut jac = InjectionJacobian {
            dp_dtheta: DMatrix::zeros(n, n),
            dp_dv: DMatrix::zeros(n, n),
            dq_dtheta: DMatrix::zeros(n, n),
            dq_dv: DMatrix::zeros(n, n),
        };
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (gij, bij) = (self.g[(i, j)], self.b[(i, j)]);
                if gij == 0.0 && bij == 0.0 {
                    continue;
                }
                let (s, c) = (theta[i] - theta[j]).sin_cos();
                let t1 = gij * s - bij * c;
                let t2 = gij * c + bij * s;
                jac.dp_dtheta[(i, j)] = v[i] * v[j] * t1;
                jac.dp_dv[(i, j)] = v[i] * t2;
                jac.dq_dtheta[(i, j)] = -v[i] * v[j] * t2;
                jac.dq_dv[(i, j)] = v[i] * t1;
            }
            let (gii, bii) = (self.g[(i, i)], self.b[(i, i)]);
            jac.dp_dtheta[(i, i)] = -q[i] - bii * v[i] * v[i];
            jac.dp_dv[(i, i)] = p[i] / v[i] + gii * v[i];
            jac.dq_dtheta[(i, i)] = p[i] - gii * v[i] * v[i];
            jac.dq_dv[(i, i)] = q[i] / v[i] - bii * v[i];
        }
        Ok(jac)
    }

    /// True when every bus is reachable from bus 0 through nonzero off-diagonal entries.
    pub fn is_connected(&self) -> bool {
        let n = self.n_buses();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && (self.g[(i, j)] != 0.0 || self.b[(i, j)] != 0.0) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}
