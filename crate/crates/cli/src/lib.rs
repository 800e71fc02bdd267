//! Front end for the tuner: model loading, campaign runs and report files.

pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use svtune::grid::benchmarks::build_benchmark;
use svtune::grid::{GridError, ModelFile};
use svtune::model::ParametricStateSpace;
use svtune::spectral::OptimizationCurve;
use svtune::tuner::{
    minimize_gamma, pk_baseline, stabilize, Alg1Config, Method, PkConfig, RunStatus, StabilizeConfig, TuneError,
    TuningReport,
};

pub use report::{emit_report, report_json, EmittedFiles};

/// Exit status when the command reached its goal.
pub const EXIT_OK: i32 = 0;
/// Exit status for configuration, model or I/O problems before tuning.
pub const EXIT_SETUP: i32 = 1;
/// Exit status when tuning ran but missed its goal; the report is still written.
pub const EXIT_TUNING: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Stabilize,
    MinimizeGamma,
    Analyze,
    PkBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSource {
    Benchmark(String),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub source: ModelSource,
    /// Factor applied to the model's initial parameters.
    pub scale: f64,
    pub alpha: Option<f64>,
    pub k_max: Option<usize>,
    pub rel_tol: Option<f64>,
    /// Curve position `Re s = delta` for `minimize-gamma`.
    pub delta: Option<f64>,
    pub out: PathBuf,
    /// Recorded only; the pipeline is deterministic.
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn new(command: Command, source: ModelSource) -> Self {
        Self {
            command,
            source,
            scale: 1.0,
            alpha: None,
            k_max: None,
            rel_tol: None,
            delta: None,
            out: PathBuf::from("svtune-out"),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(CliError::Config(format!("scale must be positive, got {}", self.scale)));
        }
        if let Some(d) = self.delta {
            if !d.is_finite() {
                return Err(CliError::Config("delta must be finite".into()));
            }
        }
        self.alg1().validate()?;
        Ok(())
    }

    fn alg1(&self) -> Alg1Config {
        let mut c = Alg1Config::default();
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        if let Some(k) = self.k_max {
            c.k_max = k;
        }
        if let Some(r) = self.rel_tol {
            c.rel_tol = r;
        }
        c
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Model { path: String, source: GridError },
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error("cannot write report to {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_SETUP
    }
}

/// A loaded model with its starting parameters.
pub struct LoadedModel {
    pub system: ParametricStateSpace,
    pub k0: DVector<f64>,
}

/// Parses and validates a model file.
pub fn parse_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    ModelFile::from_json(&text).map_err(|source| CliError::Model {
        path: path.display().to_string(),
        source,
    })
}

/// Builds the state-space family and `scale * K0`, clamped into the box.
pub fn load_model(source: &ModelSource, scale: f64) -> Result<LoadedModel, CliError> {
    let (label, model) = match source {
        ModelSource::Benchmark(name) => {
            let b = build_benchmark(name).map_err(|source| CliError::Model {
                path: name.clone(),
                source,
            })?;
            (name.clone(), b.model)
        }
        ModelSource::File(path) => {
            let label = path.display().to_string();
            let model = parse_model(path)?.validate().map_err(|source| CliError::Model {
                path: label.clone(),
                source,
            })?;
            (label, model)
        }
    };
    let built = model.build().map_err(|source| CliError::Model { path: label, source })?;
    let p = &model.params;
    let k0 = DVector::from_fn(p.initial.len(), |i, _| (scale * p.initial[i]).clamp(p.lower[i], p.upper[i]));
    Ok(LoadedModel {
        system: built.system,
        k0,
    })
}

/// Result of a completed run.
pub struct RunOutcome {
    pub report: TuningReport,
    pub files: EmittedFiles,
    pub exit_code: i32,
}

/// Whether a finished run met the goal of its command.
pub fn goal_reached(command: Command, report: &TuningReport) -> bool {
    match command {
        Command::Analyze => true,
        Command::Stabilize | Command::PkBaseline => report.is_stable(),
        Command::MinimizeGamma => matches!(report.status, RunStatus::Converged | RunStatus::Stationary),
    }
}

/// Loads the model, runs the command and writes the report files.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let model = load_model(&cfg.source, cfg.scale)?;
    let report = execute(cfg, &model)?;
    if let Some(seed) = cfg.seed {
        log::info!("seed {seed} recorded; the tuning pipeline draws no random numbers");
    }
    let files = emit_report(&report, &cfg.out)?;
    let exit_code = if goal_reached(cfg.command, &report) { EXIT_OK } else { EXIT_TUNING };
    Ok(RunOutcome {
        report,
        files,
        exit_code,
    })
}

fn execute(cfg: &RunConfig, model: &LoadedModel) -> Result<TuningReport, CliError> {
    let sys = &model.system;
    let k0 = &model.k0;
    let report = match cfg.command {
        Command::Analyze => analyze(sys, k0)?,
        Command::Stabilize => {
            let c = StabilizeConfig {
                alg1: cfg.alg1(),
                ..StabilizeConfig::default()
            };
            stabilize(sys, k0, &c)?.1
        }
        Command::MinimizeGamma => {
            let curve = OptimizationCurve::vertical(cfg.delta.unwrap_or(0.0));
            minimize_gamma(sys, k0, &curve, &cfg.alg1())?.1
        }
        Command::PkBaseline => {
            let mut c = PkConfig::default();
            if let Some(a) = cfg.alpha {
                c.alpha = a;
            }
            pk_baseline(sys, k0, &c)?.1
        }
    };
    Ok(report)
}

/// A report that lists the poles at `k0` without tuning.
pub fn analyze(sys: &ParametricStateSpace, k0: &DVector<f64>) -> Result<TuningReport, TuneError> {
    let started = Instant::now();
    sys.check_bounds(k0.as_slice())?;
    let poles = sys.compute_poles(k0.as_slice())?;
    let k: Vec<f64> = k0.iter().copied().collect();
    Ok(TuningReport {
        method: Method::Analyze,
        status: RunStatus::Analyzed,
        parameter_names: sys.names().to_vec(),
        k_initial: k.clone(),
        k_final: k,
        max_re_initial: poles.max_real(),
        max_re_final: poles.max_real(),
        unstable_initial: poles.unstable_count(),
        unstable_final: poles.unstable_count(),
        poles_final: poles.iter().copied().collect(),
        outer: Vec::new(),
        inner: Vec::new(),
        warnings: Vec::new(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
