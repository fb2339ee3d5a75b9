//! Simulation library for hybrid regularizations of the accelerated gradient ODE.
//!
//! The crate is organized bottom-up:
//!
//! - [`cost`], [`state`], [`trace`], [`config`]: shared domain types.
//! - [`dynamics`] and [`signal`]: continuous-time vector fields and bounded disturbances.
//! - [`engine`]: a fixed-step hybrid simulator with Runge-Kutta flows, the
//!   discretization-augmented jump set and perturbation support.
//! - [`hands`]: the two clock-restarting hybrid systems (HAND-1, HAND-2).
//! - [`analysis`]: Lyapunov monitors, rate certificates and probes.

// Validation uses `!(x > 0.0)` so that NaN is rejected along with the rest;
// matrix code indexes by row and column.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod cost;
pub mod dynamics;
pub mod engine;
mod error;
pub mod hands;
pub mod signal;
pub mod state;
pub mod trace;

pub use config::{Integrator, JumpPolicy, SolverConfig, TableauId};
pub use cost::{grad_check, make_quadratic, CostFunction, Objective};
pub use engine::{simulate, HybridSystem, PerturbationSet};
pub use error::{Error, Result};
pub use hands::{hand1, hand2, Hand, HandKind, HandParams};
pub use signal::DisturbanceSpec;
pub use state::{HybridState, HybridTime};
pub use trace::{FaultKind, PointKind, Termination, Trace, TracePoint};

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
