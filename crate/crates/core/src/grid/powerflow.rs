//! Newton-Raphson power flow in polar coordinates, flat start, full steps.

use nalgebra::{DMatrix, DVector};

use super::network::GridNetwork;
use super::GridError;

/// Specified quantities at a bus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BusSpec {
    /// Angle reference with fixed magnitude.
    Slack { v: f64 },
    /// Fixed net active injection and magnitude.
    Pv { p: f64, v: f64 },
    /// Fixed net active and reactive injection.
    Pq { p: f64, q: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFlowOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
        }
    }
}

/// Converged bus voltages and the injections they produce.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlowSolution {
    pub v: DVector<f64>,
    pub theta: DVector<f64>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

struct Layout {
    theta_buses: Vec<usize>,
    v_buses: Vec<usize>,
}

fn layout(spec: &[BusSpec]) -> Result<(usize, Layout), GridError> {
    let slacks: Vec<usize> = (0..spec.len())
        .filter(|&i| matches!(spec[i], BusSpec::Slack { .. }))
        .collect();
    if slacks.len() != 1 {
        return Err(GridError::Validation(format!(
            "exactly one slack bus required, found {}",
            slacks.len()
        )));
    }
    let theta_buses = (0..spec.len()).filter(|&i| i != slacks[0]).collect();
    let v_buses = (0..spec.len())
        .filter(|&i| matches!(spec[i], BusSpec::Pq { .. }))
        .collect();
    Ok((slacks[0], Layout { theta_buses, v_buses }))
}

fn mismatch(
    net: &GridNetwork,
    spec: &[BusSpec],
    lay: &Layout,
    v: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DVector<f64>, GridError> {
    let (p, q) = net.compute_injections(v, theta)?;
    let mut f = DVector::zeros(lay.theta_buses.len() + lay.v_buses.len());
    for (r, &i) in lay.theta_buses.iter().enumerate() {
        let target = match spec[i] {
            BusSpec::Pv { p, .. } | BusSpec::Pq { p, .. } => p,
            BusSpec::Slack { .. } => unreachable!(),
        };
        f[r] = p[i] - target;
    }
    let off = lay.theta_buses.len();
    for (r, &i) in lay.v_buses.iter().enumerate() {
        if let BusSpec::Pq { q: target, .. } = spec[i] {
            f[off + r] = q[i] - target;
        }
    }
    Ok(f)
}

pub fn solve_power_flow(
    net: &GridNetwork,
    spec: &[BusSpec],
    opts: PowerFlowOptions,
) -> Result<PowerFlowSolution, GridError> {
    let n = net.n_buses();
    if spec.len() != n {
        return Err(GridError::Shape(format!("{} bus specs for {n} buses", spec.len())));
    }
    let (_, lay) = layout(spec)?;
    let mut v = DVector::from_element(n, 1.0);
    let mut theta = DVector::zeros(n);
    for (i, s) in spec.iter().enumerate() {
        match *s {
            BusSpec::Slack { v: vs } | BusSpec::Pv { v: vs, .. } => v[i] = vs,
            BusSpec::Pq { .. } => {}
        }
    }
    let n_t = lay.theta_buses.len();
    let n_unknown = n_t + lay.v_buses.len();
    let mut residual = f64::INFINITY;
    for iter in 0..=opts.max_iterations {
        let f = mismatch(net, spec, &lay, &v, &theta)?;
        residual = f.amax();
        if !residual.is_finite() {
            break;
        }
        if residual < opts.tolerance {
            let (p, q) = net.compute_injections(&v, &theta)?;
            log::debug!("power flow converged in {iter} iterations, residual {residual:e}");
            return Ok(PowerFlowSolution {
                v,
                theta,
                p,
                q,
                iterations: iter,
                residual,
            });
        }
        if iter == opts.max_iterations {
            break;
        }
        let jac = net.injection_jacobian(&v, &theta)?;
        let mut j = DMatrix::zeros(n_unknown, n_unknown);
        for (r, &i) in lay.theta_buses.iter().enumerate() {
            for (c, &k) in lay.theta_buses.iter().enumerate() {
                j[(r, c)] = jac.dp_dtheta[(i, k)];
            }
            for (c, &k) in lay.v_buses.iter().enumerate() {
                j[(r, n_t + c)] = jac.dp_dv[(i, k)];
            }
        }
        for (r, &i) in lay.v_buses.iter().enumerate() {
            for (c, &k) in lay.theta_buses.iter().enumerate() {
                j[(n_t + r, c)] = jac.dq_dtheta[(i, k)];
            }
            for (c, &k) in lay.v_buses.iter().enumerate() {
                j[(n_t + r, n_t + c)] = jac.dq_dv[(i, k)];
            }
        }
        let dx = match j.lu().solve(&f) {
            Some(dx) => dx,
            None => break,
        };
        for (c, &k) in lay.theta_buses.iter().enumerate() {
            theta[k] -= dx[c];
        }
        for (c, &k) in lay.v_buses.iter().enumerate() {
            v[k] -= dx[n_t + c];
        }
    }
    Err(GridError::PowerFlow {
        iterations: opts.max_iterations,
        residual,
    })
}
