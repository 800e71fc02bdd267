//! Lyapunov-matrix baseline: alternate between a Lyapunov certificate for the
//! current parameters and a linearized parameter update for that certificate.

use std::time::Instant;

use log::info;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{elapsed_ms, InnerRecord, Method, OuterRecord, RunStatus, StepOutcome, TuneError, TuningReport};
use crate::linalg::{self, C64};
use crate::lmi::{LmiBlock, LmiOptions, LmiProblem, SolveStatus};
use crate::model::{ParameterVector, ParametricStateSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PkPhase {
    P,
    K,
}

/// A Lyapunov matrix with `P ⪰ I` and the decay margin it certifies.
#[derive(Clone, Debug, PartialEq)]
pub struct PkState {
    pub p: DMatrix<f64>,
    /// Largest `β` with `AᵀP + PA + 2βP ⪯ 0`.
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PkConfig {
    pub max_outer: usize,
    pub alpha: f64,
    pub trust_radius: Option<DVector<f64>>,
    /// The P-phase targets `β* - margin (|β*| + 0.05)` to keep `P` well conditioned.
    pub margin: f64,
}

impl Default for PkConfig {
    fn default() -> Self {
        Self {
            max_outer: 50,
            alpha: 0.5,
            trust_radius: None,
            margin: 0.05,
        }
    }
}

/// Largest `β` with `AᵀP + PA + 2βP ⪯ 0` for a fixed positive definite `P`.
pub fn certified_beta(a: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<f64> {
    let l = Cholesky::new(p.clone())?.l();
    let m = a.transpose() * p + p * a;
    let y = l.solve_lower_triangular(&m)?;
    let w = l.solve_lower_triangular(&y.transpose())?;
    let w = (&w + w.transpose()) * 0.5;
    let top = *linalg::symmetric_eigenvalues(&w).last()?;
    Some(-0.5 * top)
}

/// P-phase: a Lyapunov matrix for `A` with a decay margin close to the
/// best achievable `-max Re λ(A)`, scaled so that `λ_min(P) = 1`.
pub fn pk_p_phase(a: &DMatrix<f64>, margin: f64) -> Result<PkState, TuneError> {
    let n = a.nrows();
    let ev = linalg::real_eigenvalues(a).ok_or_else(|| TuneError::Config("eigenvalues of A did not converge".into()))?;
    let beta_star = -ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let target = beta_star - margin * (beta_star.abs() + 0.05);
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] += target;
    }
    let p = linalg::lyapunov(&shifted, &DMatrix::identity(n, n))
        .ok_or_else(|| TuneError::Config("Lyapunov equation is singular".into()))?;
    let lam_min = linalg::symmetric_eigenvalues(&p)[0];
    if !(lam_min > 0.0) {
        return Err(TuneError::Config("Lyapunov solution is not positive definite".into()));
    }
    let p = p / lam_min;
    let beta = certified_beta(a, &p).ok_or_else(|| TuneError::Config("P lost definiteness".into()))?;
    Ok(PkState { p, beta })
}

/// K-phase: maximizes `β` over the linearized `A(K)` with `P` fixed, inside
/// the box intersected with the trust region. Returns the new parameters,
/// the predicted margin and the solver status.
pub fn pk_k_phase(
    sys: &ParametricStateSpace,
    bounds: &ParameterVector,
    state: &PkState,
) -> Result<(DVector<f64>, f64, SolveStatus), TuneError> {
    let k0 = bounds.values().clone();
    let (a0, _) = sys.eval_state_space(k0.as_slice())?;
    let jac = sys.state_space_jacobian(k0.as_slice())?;
    let (lo, hi) = bounds.trust_box();
    let p = &state.p;
    let active: Vec<usize> = (0..k0.len())
        .filter(|&l| hi[l] > lo[l] && jac[l].0.iter().any(|&x| x != 0.0))
        .collect();
    if active.is_empty() {
        return Ok((k0, state.beta, SolveStatus::Optimal));
    }
    let n = active.len();
    let width: Vec<f64> = active.iter().map(|&l| hi[l] - lo[l]).collect();
    let lyap = |m: &DMatrix<f64>| -(m.transpose() * p + p * m);
    // A_L at z = 0 (lower corner of the active box)
    let mut a_lo = a0.clone();
    for &l in &active {
        a_lo += &jac[l].0 * (lo[l] - k0[l]);
    }
    let mut coeffs: Vec<Option<DMatrix<f64>>> = active
        .iter()
        .zip(&width)
        .map(|(&l, &w)| Some(lyap(&jac[l].0) * w))
        .collect();
    coeffs.push(Some(p * -2.0));
    let problem = LmiProblem {
        c: {
            let mut c = DVector::zeros(n + 1);
            c[n] = -1.0;
            c
        },
        blocks: vec![LmiBlock {
            f0: lyap(&a_lo),
            coeffs,
        }],
        lower: {
            let mut v = DVector::zeros(n + 1);
            v[n] = f64::NEG_INFINITY;
            v
        },
        upper: {
            let mut v = DVector::from_element(n + 1, 1.0);
            v[n] = f64::INFINITY;
            v
        },
    };
    let to_k = |z: &DVector<f64>| {
        let mut k = k0.clone();
        for (a, &l) in active.iter().enumerate() {
            k[l] = (lo[l] + z[a] * width[a]).clamp(lo[l], hi[l]);
        }
        k
    };
    let lin_a = |k: &DVector<f64>| {
        let mut a = a0.clone();
        for &l in &active {
            a += &jac[l].0 * (k[l] - k0[l]);
        }
        a
    };
    let mut x0 = DVector::from_element(n + 1, 0.5);
    let b0 = certified_beta(&lin_a(&to_k(&x0)), p).ok_or_else(|| TuneError::Config("P is not positive definite".into()))?;
    x0[n] = b0 - 0.1 * (1.0 + b0.abs());
    let sol = problem.solve(
        &x0,
        &LmiOptions {
            gap: 1e-7,
            ..LmiOptions::default()
        },
    );
    let k_new = to_k(&sol.x);
    let predicted = certified_beta(&lin_a(&k_new), p).unwrap_or(f64::NEG_INFINITY);
    Ok((k_new, predicted, sol.status))
}

/// Alternates P- and K-phases until the largest pole real part is negative.
///
/// A K-phase step that fails to lower the largest real part is rejected and
/// the trust radii are scaled by `alpha`.
pub fn pk_baseline(
    sys: &ParametricStateSpace,
    k0: &DVector<f64>,
    cfg: &PkConfig,
) -> Result<(DVector<f64>, TuningReport), TuneError> {
    let started = Instant::now();
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(TuneError::Config(format!("alpha = {} must lie in (0, 1)", cfg.alpha)));
    }
    sys.check_bounds(k0.as_slice())?;
    let poles0 = sys.compute_poles(k0.as_slice())?;
    let mut k = k0.clone();
    let mut poles = poles0.clone();
    let mut trust = cfg
        .trust_radius
        .clone()
        .unwrap_or_else(|| ParameterVector::default_trust_radius(k0, sys.lower(), sys.upper()));
    let mut outer = Vec::new();
    let mut inner = Vec::new();
    let mut mu = 0;
    while poles.max_real() >= 0.0 && mu < cfg.max_outer {
        mu += 1;
        let t0 = Instant::now();
        let (a, _) = sys.eval_state_space(k.as_slice())?;
        let state = pk_p_phase(&a, cfg.margin)?;
        let bounds = ParameterVector::new(k.clone(), sys.lower().clone(), sys.upper().clone(), trust.clone())?;
        let (k_new, predicted, status) = pk_k_phase(sys, &bounds, &state)?;
        let new_poles = sys.compute_poles(k_new.as_slice())?;
        let accepted = new_poles.max_real() < poles.max_real();
        let before = poles.max_real();
        let s_pmax = poles.rightmost().unwrap_or(C64::new(0.0, 0.0));
        let record_trust: Vec<f64> = trust.iter().copied().collect();
        if accepted {
            k = k_new;
            poles = new_poles;
        } else {
            trust *= cfg.alpha;
        }
        info!("pk {mu}: beta = {:.6}, max Re {before:.6} -> {:.6}", state.beta, poles.max_real());
        inner.push(InnerRecord {
            mu,
            k: 1,
            delta: None,
            gamma_before: None,
            gamma_candidate: None,
            gamma: None,
            gamma_predicted: None,
            beta: Some(predicted),
            trust_radius: record_trust,
            outcome: if accepted { StepOutcome::Accepted } else { StepOutcome::Rejected },
            crossing: false,
            max_re_pole: poles.max_real(),
            subproblem_status: Some(status),
            params: k.iter().copied().collect(),
            wall_ms: elapsed_ms(t0),
        });
        outer.push(OuterRecord {
            mu,
            delta: None,
            delta_max: None,
            delta_fallback: false,
            s_pmax,
            max_re_before: before,
            max_re_after: poles.max_real(),
            accepted,
            inner_iterations: 1,
            inner_status: if accepted { RunStatus::Converged } else { RunStatus::Stalled },
            wall_ms: elapsed_ms(t0),
        });
        if trust.norm() < super::TRUST_UNDERFLOW {
            break;
        }
    }
    let status = if poles.max_real() < 0.0 {
        if mu == 0 {
            RunStatus::AlreadyStable
        } else {
            RunStatus::Stabilized
        }
    } else if mu >= cfg.max_outer {
        RunStatus::OuterCapReached
    } else {
        RunStatus::Stalled
    };
    let report = TuningReport {
        method: Method::PkBaseline,
        status,
        parameter_names: sys.names().to_vec(),
        k_initial: k0.iter().copied().collect(),
        k_final: k.iter().copied().collect(),
        max_re_initial: poles0.max_real(),
        max_re_final: poles.max_real(),
        unstable_initial: poles0.unstable_count(),
        unstable_final: poles.unstable_count(),
        poles_final: poles.iter().copied().collect(),
        outer,
        inner,
        warnings: Vec::new(),
        wall_ms: elapsed_ms(started),
    };
    Ok((k, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_identity_gives_unit_margin() {
        let s = pk_p_phase(&(-DMatrix::identity(3, 3)), 0.05).unwrap();
        assert!((&s.p - DMatrix::identity(3, 3)).amax() < 1e-9);
        assert!((s.beta - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unstable_identity_gives_negative_margin() {
        let s = pk_p_phase(&DMatrix::identity(2, 2), 0.05).unwrap();
        assert!(s.beta < 0.0);
        assert!((s.beta + 1.0).abs() < 1e-9);
    }

    #[test]
    fn certificate_holds_for_nonnormal_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 10.0, 0.0, -2.0]);
        let s = pk_p_phase(&a, 0.05).unwrap();
        let m = a.transpose() * &s.p + &s.p * &a + &s.p * (2.0 * s.beta);
        assert!(linalg::symmetric_eigenvalues(&m).last().unwrap() < &1e-8);
        assert!(linalg::symmetric_eigenvalues(&s.p)[0] >= 1.0 - 1e-12);
        assert!(s.beta <= 1.0 + 1e-12);
    }
}
