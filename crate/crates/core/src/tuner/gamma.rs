use std::time::Instant;

use log::{debug, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{
    detect_crossing, elapsed_ms, Alg1Config, InnerRecord, Method, RunStatus, StepOutcome, TuneError, TuningReport,
    TRUST_UNDERFLOW,
};
use crate::model::{ModelError, OperatingPoint, ParameterVector, ParametricStateSpace, NEAR_POLE_GUARD};
use crate::spectral::{default_sample_set, gamma_of, GammaValue, OptimizationCurve, SampleSet, SpectralError};
use crate::subproblem::{solve_subproblem, ConvexSubproblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alg1Status {
    Converged,
    Stationary,
    MaxIterations,
    Stalled,
}

impl From<Alg1Status> for RunStatus {
    fn from(s: Alg1Status) -> Self {
        match s {
            Alg1Status::Converged => RunStatus::Converged,
            Alg1Status::Stationary => RunStatus::Stationary,
            Alg1Status::MaxIterations => RunStatus::MaxIterations,
            Alg1Status::Stalled => RunStatus::Stalled,
        }
    }
}

/// `Γ(K)` on the sample set rebuilt from the poles at `K`.
///
/// This is the quantity recorded in reports, so re-evaluating it at a stored
/// snapshot reproduces the recorded value.
pub fn gamma_at(sys: &ParametricStateSpace, k: &[f64], curve: &OptimizationCurve) -> Result<GammaValue, TuneError> {
    let op = sys.at(k)?;
    Ok(gamma_of(&op, curve, &default_sample_set(op.poles(), curve))?)
}

struct Iterate<'a> {
    op: OperatingPoint<'a>,
    omega: SampleSet,
    gamma: GammaValue,
}

fn iterate<'a>(sys: &'a ParametricStateSpace, k: &[f64], curve: &OptimizationCurve) -> Result<Iterate<'a>, TuneError> {
    let op = sys.at(k)?;
    let omega = default_sample_set(op.poles(), curve);
    let gamma = gamma_of(&op, curve, &omega)?;
    Ok(Iterate { op, omega, gamma })
}

pub(crate) struct Alg1Run {
    pub k: DVector<f64>,
    pub status: Alg1Status,
    pub records: Vec<InnerRecord>,
}

/// Trust-region Γ minimization from `k0` along `curve`; `mu` and `delta` only label the records.
pub(crate) fn run_alg1(
    sys: &ParametricStateSpace,
    k0: &DVector<f64>,
    curve: &OptimizationCurve,
    cfg: &Alg1Config,
    mu: usize,
) -> Result<Alg1Run, TuneError> {
    cfg.validate()?;
    let lower = sys.lower().clone();
    let upper = sys.upper().clone();
    let mut trust = match &cfg.trust_radius {
        Some(r) if r.len() == k0.len() => r.clone(),
        Some(r) => {
            return Err(TuneError::Config(format!(
                "{} trust radii for {} parameters",
                r.len(),
                k0.len()
            )))
        }
        None => ParameterVector::default_trust_radius(k0, &lower, &upper),
    };
    let mut cur = match iterate(sys, k0.as_slice(), curve) {
        Ok(it) => it,
        Err(TuneError::Spectral(SpectralError::NearPole { pole, .. })) => {
            return Err(TuneError::CurveThroughPole { pole })
        }
        Err(e) => return Err(e),
    };
    if let Some(p) = cur
        .op
        .poles()
        .iter()
        .find(|p| curve.project(p.value).1 < NEAR_POLE_GUARD * (1.0 + p.value.norm()))
    {
        return Err(TuneError::CurveThroughPole { pole: p.value });
    }
    let delta = curve.delta();
    let mut k = k0.clone();
    let mut records = Vec::new();
    let mut small_steps = 0;
    let mut status = Alg1Status::MaxIterations;

    for it in 1..=cfg.k_max {
        let started = Instant::now();
        let points: Vec<_> = cur
            .omega
            .evaluation_samples()
            .iter()
            .map(|s| curve.point(s.t))
            .collect();
        let lin = cur.op.linearize_many(&points, cfg.sensitivity)?;
        let bounds = ParameterVector::new(k.clone(), lower.clone(), upper.clone(), trust.clone())?;
        let sol = solve_subproblem(&ConvexSubproblem::new(lin, bounds)?);
        let mut record = InnerRecord {
            mu,
            k: it,
            delta,
            gamma_before: Some(cur.gamma.value),
            gamma_candidate: None,
            gamma: Some(cur.gamma.value),
            gamma_predicted: Some(sol.gamma),
            beta: None,
            trust_radius: trust.iter().copied().collect(),
            outcome: StepOutcome::Stationary,
            crossing: false,
            max_re_pole: cur.op.poles().max_real(),
            subproblem_status: Some(sol.status),
            params: k.iter().copied().collect(),
            wall_ms: 0.0,
        };
        if sol.k_new == k {
            record.wall_ms = elapsed_ms(started);
            records.push(record);
            status = Alg1Status::Stationary;
            break;
        }

        let candidate = match iterate(sys, sol.k_new.as_slice(), curve) {
            Ok(c) => Some(c),
            // a candidate pole sitting on the curve is as bad as a crossing
            Err(TuneError::Spectral(SpectralError::NearPole { .. }))
            | Err(TuneError::Model(ModelError::NearSingular { .. })) => None,
            Err(e) => return Err(e),
        };
        let (accept, crossing) = match &candidate {
            Some(c) => {
                let crossing = detect_crossing(cur.op.poles(), c.op.poles(), curve)?.crossed;
                record.gamma_candidate = Some(c.gamma.value);
                (c.gamma.value < cur.gamma.value && !crossing, crossing)
            }
            None => (false, true),
        };
        record.crossing = crossing;
        if accept {
            let next = candidate.expect("accepted candidate exists");
            let rel = (cur.gamma.value - next.gamma.value) / cur.gamma.value;
            k = sol.k_new.clone();
            cur = next;
            record.outcome = StepOutcome::Accepted;
            record.gamma = Some(cur.gamma.value);
            record.max_re_pole = cur.op.poles().max_real();
            record.params = k.iter().copied().collect();
            small_steps = if rel < cfg.rel_tol { small_steps + 1 } else { 0 };
        } else {
            trust *= cfg.alpha;
            record.outcome = StepOutcome::Rejected;
        }
        debug!(
            "alg1 mu={mu} k={it} gamma={:.6e} cand={:?} {:?}",
            cur.gamma.value, record.gamma_candidate, record.outcome
        );
        record.wall_ms = elapsed_ms(started);
        records.push(record);
        if small_steps >= cfg.rel_tol_window {
            status = Alg1Status::Converged;
            break;
        }
        if trust.norm() < TRUST_UNDERFLOW {
            warn!("trust region underflow after {it} iterations");
            status = Alg1Status::Stalled;
            break;
        }
    }
    Ok(Alg1Run {
        k,
        status,
        records,
    })
}

/// Minimizes `Γ(K)` along `curve` from `k0`.
pub fn minimize_gamma(
    sys: &ParametricStateSpace,
    k0: &DVector<f64>,
    curve: &OptimizationCurve,
    cfg: &Alg1Config,
) -> Result<(DVector<f64>, TuningReport), TuneError> {
    let started = Instant::now();
    sys.check_bounds(k0.as_slice())?;
    let poles0 = sys.compute_poles(k0.as_slice())?;
    let run = run_alg1(sys, k0, curve, cfg, 1)?;
    let poles = sys.compute_poles(run.k.as_slice())?;
    let report = TuningReport {
        method: Method::MinimizeGamma,
        status: run.status.into(),
        parameter_names: sys.names().to_vec(),
        k_initial: k0.iter().copied().collect(),
        k_final: run.k.iter().copied().collect(),
        max_re_initial: poles0.max_real(),
        max_re_final: poles.max_real(),
        unstable_initial: poles0.unstable_count(),
        unstable_final: poles.unstable_count(),
        poles_final: poles.iter().copied().collect(),
        outer: Vec::new(),
        inner: run.records,
        warnings: Vec::new(),
        wall_ms: elapsed_ms(started),
    };
    Ok((run.k, report))
}
