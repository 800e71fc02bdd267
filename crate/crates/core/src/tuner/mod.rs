//! Outer tuning loops: Γ minimization with an adaptive trust region,
//! stabilization by a sequence of vertical curves, and a Lyapunov-based
//! baseline.

mod crossing;
mod gamma;
mod pk;
mod stabilize;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::C64;
use crate::model::{ModelError, Pole, SensitivityMethod};
use crate::spectral::SpectralError;
use crate::subproblem::{SolveStatus, SubproblemError};

pub use crossing::{detect_crossing, CrossingReport};
pub use gamma::{gamma_at, minimize_gamma, Alg1Status};
pub use pk::{pk_baseline, pk_k_phase, pk_p_phase, PkConfig, PkPhase, PkState};
pub use stabilize::{select_delta, stabilize, DeltaSelection, StabilizeConfig};

/// Trust radii below this norm count as a stall.
pub const TRUST_UNDERFLOW: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TuneError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
    #[error("curve passes through pole {pole} at the initial parameters")]
    CurveThroughPole { pole: C64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pole sets differ in size ({before} vs {after})")]
    PoleCount { before: usize, after: usize },
}

/// Settings of the Γ-minimization loop.
#[derive(Clone, Debug, PartialEq)]
pub struct Alg1Config {
    pub k_max: usize,
    pub alpha: f64,
    pub rel_tol: f64,
    /// Number of consecutive accepted steps below `rel_tol` that end the run.
    pub rel_tol_window: usize,
    /// Initial trust radii; defaults to `0.1 (upper - lower)`.
    pub trust_radius: Option<DVector<f64>>,
    pub sensitivity: SensitivityMethod,
}

impl Default for Alg1Config {
    fn default() -> Self {
        Self {
            k_max: 50,
            alpha: 0.5,
            rel_tol: 1e-3,
            rel_tol_window: 3,
            trust_radius: None,
            sensitivity: SensitivityMethod::Auto,
        }
    }
}

impl Alg1Config {
    pub fn validate(&self) -> Result<(), TuneError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TuneError::Config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if self.k_max < 1 {
            return Err(TuneError::Config("k_max must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(TuneError::Config(format!("rel_tol = {} must be positive", self.rel_tol)));
        }
        if self.rel_tol_window < 1 {
            return Err(TuneError::Config("rel_tol_window must be at least 1".into()));
        }
        if let Some(r) = &self.trust_radius {
            if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(TuneError::Config("trust radii must be positive and finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Analyze,
    MinimizeGamma,
    Stabilize,
    PkBaseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// No tuning requested.
    Analyzed,
    AlreadyStable,
    Stabilized,
    /// Relative Γ improvement stayed below the tolerance.
    Converged,
    /// The subproblem found no improving step.
    Stationary,
    MaxIterations,
    /// Trust radii underflowed after repeated rejections.
    Stalled,
    OuterCapReached,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// The subproblem returned the anchor; nothing to evaluate.
    Stationary,
}

/// One inner iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerRecord {
    pub mu: usize,
    pub k: usize,
    pub delta: Option<f64>,
    /// Γ at `K^(k-1)`.
    pub gamma_before: Option<f64>,
    /// Γ at the subproblem's proposal.
    pub gamma_candidate: Option<f64>,
    /// Γ at `K^(k)`, the iterate kept after the acceptance test.
    pub gamma: Option<f64>,
    /// Optimal value of the linearized subproblem.
    pub gamma_predicted: Option<f64>,
    /// Decay margin certified by the Lyapunov matrix, for the baseline.
    pub beta: Option<f64>,
    pub trust_radius: Vec<f64>,
    pub outcome: StepOutcome,
    pub crossing: bool,
    /// Largest pole real part at `K^(k)`.
    pub max_re_pole: f64,
    pub subproblem_status: Option<SolveStatus>,
    /// `K^(k)`.
    pub params: Vec<f64>,
    pub wall_ms: f64,
}

impl InnerRecord {
    pub fn accepted(&self) -> bool {
        self.outcome == StepOutcome::Accepted
    }
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub mu: usize,
    pub delta: Option<f64>,
    pub delta_max: Option<f64>,
    pub delta_fallback: bool,
    pub s_pmax: C64,
    pub max_re_before: f64,
    pub max_re_after: f64,
    /// False when the iterate was reverted because the largest real part did not drop.
    pub accepted: bool,
    pub inner_iterations: usize,
    pub inner_status: RunStatus,
    pub wall_ms: f64,
}

/// Full history of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub method: Method,
    pub status: RunStatus,
    pub parameter_names: Vec<String>,
    pub k_initial: Vec<f64>,
    pub k_final: Vec<f64>,
    pub max_re_initial: f64,
    pub max_re_final: f64,
    pub unstable_initial: usize,
    pub unstable_final: usize,
    pub poles_final: Vec<Pole>,
    pub outer: Vec<OuterRecord>,
    pub inner: Vec<InnerRecord>,
    pub warnings: Vec<String>,
    pub wall_ms: f64,
}

impl TuningReport {
    /// Accepted outer iterations, in order.
    pub fn accepted_outer(&self) -> impl Iterator<Item = &OuterRecord> {
        self.outer.iter().filter(|o| o.accepted)
    }

    pub fn is_stable(&self) -> bool {
        self.max_re_final < 0.0
    }
}

pub(crate) fn elapsed_ms(t: std::time::Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
