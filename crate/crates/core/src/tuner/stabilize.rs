use std::time::Instant;

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gamma::run_alg1;
use super::{elapsed_ms, Alg1Config, Method, OuterRecord, RunStatus, TuneError, TuningReport};
use crate::linalg::C64;
use crate::model::ParametricStateSpace;
use crate::spectral::{default_sample_set, gamma_of, OptimizationCurve};

/// Settings of the stabilization loop.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilizeConfig {
    pub alg1: Alg1Config,
    pub max_outer: usize,
    pub search_candidates: usize,
    /// Offset used when no line-search candidate qualifies; defaults to
    /// `1e-3 ρ` with `ρ = max(1, pole spread)`.
    pub fallback_offset: Option<f64>,
    /// Skips the line search and places the curve at this offset right of
    /// the rightmost pole.
    pub fixed_offset: Option<f64>,
}

impl Default for StabilizeConfig {
    fn default() -> Self {
        Self {
            alg1: Alg1Config::default(),
            max_outer: 50,
            search_candidates: 16,
            fallback_offset: None,
            fixed_offset: None,
        }
    }
}

/// Outcome of the line search for the curve position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSelection {
    pub delta: f64,
    pub delta_max: Option<f64>,
    pub fallback: bool,
    /// `(Δ, maximizer next to the rightmost pole)` for every candidate.
    pub candidates: Vec<(f64, bool)>,
}

fn same_pole(a: C64, b: C64) -> bool {
    let tol = 1e-9 * (1.0 + b.norm());
    (a - b).norm() <= tol || (a - b.conj()).norm() <= tol
}

/// Places the vertical curve halfway between the rightmost pole and the
/// furthest candidate at which Γ is still attained next to that pole.
pub fn select_delta(
    sys: &ParametricStateSpace,
    k: &[f64],
    s_pmax: C64,
    cfg: &StabilizeConfig,
) -> Result<DeltaSelection, TuneError> {
    let op = sys.at(k)?;
    let re = s_pmax.re;
    let rho = op.poles().spread().max(1.0);
    let n = cfg.search_candidates.max(1);
    let offsets: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                rho
            } else {
                rho * 10f64.powf(-3.0 * (1.0 - i as f64 / (n - 1) as f64))
            }
        })
        .collect();
    let candidates: Vec<(f64, bool)> = offsets
        .par_iter()
        .map(|&off| {
            let delta = re + off;
            let curve = OptimizationCurve::vertical(delta);
            let omega = default_sample_set(op.poles(), &curve);
            let near = gamma_of(&op, &curve, &omega)
                .ok()
                .and_then(|g| g.attained_near)
                .is_some_and(|p| same_pole(p, s_pmax));
            (delta, near)
        })
        .collect();
    let delta_max = candidates
        .iter()
        .filter(|c| c.1)
        .map(|c| c.0)
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))));
    Ok(match delta_max {
        Some(dm) => DeltaSelection {
            delta: 0.5 * (dm + re),
            delta_max: Some(dm),
            fallback: false,
            candidates,
        },
        None => DeltaSelection {
            delta: re + cfg.fallback_offset.unwrap_or(1e-3 * rho),
            delta_max: None,
            fallback: true,
            candidates,
        },
    })
}

/// Moves the rightmost poles into the open left half-plane by minimizing Γ
/// along a sequence of vertical curves just right of them.
///
/// An outer iteration whose result does not lower the largest real part is
/// reverted, and the next curve is placed at half the previous offset.
pub fn stabilize(
    sys: &ParametricStateSpace,
    k0: &DVector<f64>,
    cfg: &StabilizeConfig,
) -> Result<(DVector<f64>, TuningReport), TuneError> {
    let started = Instant::now();
    cfg.alg1.validate()?;
    sys.check_bounds(k0.as_slice())?;
    let poles0 = sys.compute_poles(k0.as_slice())?;
    let mut k = k0.clone();
    let mut poles = poles0.clone();
    let mut outer = Vec::new();
    let mut inner = Vec::new();
    let mut warnings = Vec::new();
    let mut shrink = 1.0;
    let mut mu = 0;
    while poles.max_real() >= 0.0 && mu < cfg.max_outer {
        mu += 1;
        let t0 = Instant::now();
        let s_pmax = poles.rightmost().expect("non-empty pole set");
        let re = s_pmax.re;
        let (delta, delta_max, fallback) = match cfg.fixed_offset {
            Some(off) => (re + shrink * off, None, false),
            None => {
                let sel = select_delta(sys, k.as_slice(), s_pmax, cfg)?;
                if sel.fallback {
                    warnings.push(format!(
                        "outer iteration {mu}: no line-search candidate keeps the peak next to {s_pmax}; using offset {:e}",
                        sel.delta - re
                    ));
                }
                (re + shrink * (sel.delta - re), sel.delta_max, sel.fallback)
            }
        };
        let curve = OptimizationCurve::vertical(delta);
        let run = run_alg1(sys, &k, &curve, &cfg.alg1, mu)?;
        let new_poles = sys.compute_poles(run.k.as_slice())?;
        let accepted = new_poles.max_real() < poles.max_real();
        info!(
            "outer {mu}: delta = {delta:.6}, max Re {:.6} -> {:.6} ({} inner, {})",
            poles.max_real(),
            new_poles.max_real(),
            run.records.len(),
            if accepted { "kept" } else { "reverted" }
        );
        let record = OuterRecord {
            mu,
            delta: Some(delta),
            delta_max,
            delta_fallback: fallback,
            s_pmax,
            max_re_before: poles.max_real(),
            max_re_after: if accepted { new_poles.max_real() } else { poles.max_real() },
            accepted,
            inner_iterations: run.records.len(),
            inner_status: run.status.into(),
            wall_ms: elapsed_ms(t0),
        };
        inner.extend(run.records);
        outer.push(record);
        if accepted {
            k = run.k;
            poles = new_poles;
            shrink = 1.0;
        } else {
            shrink *= 0.5;
        }
    }
    let status = if poles.max_real() < 0.0 {
        if mu == 0 {
            RunStatus::AlreadyStable
        } else {
            RunStatus::Stabilized
        }
    } else {
        warn!("outer iteration cap reached with max Re = {}", poles.max_real());
        RunStatus::OuterCapReached
    };
    let report = TuningReport {
        method: Method::Stabilize,
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
        warnings,
        wall_ms: elapsed_ms(started),
    };
    Ok((k, report))
}
