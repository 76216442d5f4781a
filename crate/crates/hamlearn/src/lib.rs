//! Kernel methods for identifying and forecasting Hamiltonian systems from
//! sparse trajectory observations.
//!
//! The crate implements two recovery pipelines over reproducing-kernel
//! Hilbert spaces:
//!
//! * [`two_step`] — interpolate the position/momentum trajectories first,
//!   differentiate the interpolants, then kernel-ridge-fit the Hamiltonian
//!   against the resulting derivative targets;
//! * [`one_step`] — jointly recover trajectories and Hamiltonian by
//!   minimizing a reduced nonconvex objective over latent time-derivative
//!   slack variables, warm-started from the two-step output.
//!
//! Supporting machinery: positive-definite kernel families with analytic
//! derivatives ([`kernels`]), regularized symmetric solves ([`linalg`]),
//! trajectory interpolants ([`representer`]), an adaptive Runge-Kutta
//! integrator ([`dynamics`]), the benchmark systems and experiment protocol
//! ([`benchmarks`]), a property/invariant suite ([`checks`]), and the sweep
//! runner behind the `hamlearn` binary ([`cli`]).

pub mod benchmarks;
pub mod checks;
pub mod cli;
pub mod dynamics;
pub mod kernels;
pub mod linalg;
pub mod one_step;
mod optim;
pub mod representer;
pub mod two_step;

use serde::{Deserialize, Serialize};

/// Ridge (Tikhonov) parameters shared by both pipelines.
///
/// `lambda_q`/`lambda_p` regularize the trajectory value fits (and, in the
/// one-step method, the extended value+derivative systems). `lambda1`/
/// `lambda2` are the block ridges of the two-step Hamiltonian regression for
/// the momentum- and position-derivative constraint blocks. `lambda` is the
/// Hamiltonian ridge of the one-step reduced objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ridges {
    pub lambda_q: f64,
    pub lambda_p: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda: f64,
}

impl Default for Ridges {
    fn default() -> Self {
        Ridges {
            lambda_q: 1e-5,
            lambda_p: 1e-5,
            lambda1: 1e-3,
            lambda2: 1e-3,
            lambda: 1e-3,
        }
    }
}
