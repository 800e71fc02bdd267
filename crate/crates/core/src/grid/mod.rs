//! Power-grid models: network equations, power flow, machine and controller
//! dynamics, and reduction to a parametric state-space system.

pub mod assemble;
pub mod benchmarks;
pub mod blocks;
pub mod file;
pub mod network;
pub mod powerflow;

use thiserror::Error;

use crate::model::ModelError;

pub use assemble::{GridSystem, LinearizedDae, MachineEquilibrium, SteadyState};
pub use file::{GridModel, ModelFile, Param};
pub use network::{BusKind, GridNetwork};
pub use powerflow::{solve_power_flow, BusSpec, PowerFlowOptions, PowerFlowSolution};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported model format {found}; expected 1")]
    Version { found: u64 },
    #[error("invalid model: {0}")]
    Validation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("power flow did not converge after {iterations} iterations (residual {residual:e})")]
    PowerFlow { iterations: usize, residual: f64 },
    #[error("algebraic Jacobian is singular (sigma_min = {sigma_min:e}); near-null direction dominated by {variable}")]
    SingularAlgebraic { variable: String, sigma_min: f64 },
    #[error("unknown benchmark {0:?}")]
    UnknownBenchmark(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
