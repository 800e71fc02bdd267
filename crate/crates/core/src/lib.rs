//! Pole-anchored minimization of the peak singular value of parametric
//! linear systems, with power-grid model construction and tuning loops.

pub mod expr;
pub mod linalg;
pub mod model;
pub mod grid;
pub mod lmi;
pub mod spectral;
pub mod subproblem;
pub mod tuner;
