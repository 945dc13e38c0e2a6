//! Multilevel Picard estimators for semilinear parabolic PDEs with
//! gradient-dependent nonlinearities.
//!
//! The solver evaluates `(u(t,x), grad u(t,x))` at a point by Monte Carlo:
//! a frozen-coefficient Euler-Maruyama scheme simulates the forward
//! diffusion together with its derivative flow and the accumulated
//! Bismut-Elworthy-Li weight, and a recursive multilevel Picard estimator
//! combines those paths across Picard levels with antithetic differencing
//! and arcsine-distributed evaluation times. Random objects are addressed
//! by hierarchical keys, so every result is a pure function of
//! `(configuration, seed)` no matter how many threads run.
//!
//! Module map:
//! - [`problem`]: PDE instances (coefficients, nonlinearity, terminal
//!   condition), projection weights, built-in benchmarks.
//! - [`rng`]: keyed counter-based streams, Gaussian increments, the
//!   arcsine proxy-time sampler and its density.
//! - [`forward`]: Euler simulation of the state, Jacobian, and weight
//!   processes on the shared grid; the plain value-and-gradient estimator.
//! - [`mlp`]: the recursive multilevel Picard estimator and its schedule.
//! - [`cost`]: instrumented counters, the theoretical cost recurrence, and
//!   their reconciliation.
//! - [`oracle`]: independent references (quadrature, 1-D finite
//!   differences, coupled-path strong errors, nested Picard, fixed-point
//!   residuals).
//! - [`harness`]: declarative experiment runner with CSV/JSON output.

pub mod cost;
pub mod error;
pub mod forward;
pub mod harness;
mod linalg;
pub mod mlp;
pub mod oracle;
mod par;
pub mod problem;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision problem instance, the default for experiments.
pub type Problem64 = problem::PdeProblem<f64>;
/// Single-precision problem instance.
pub type Problem32 = problem::PdeProblem<f32>;
/// Double-precision estimator output.
pub type Estimate64 = mlp::Estimate<f64>;

pub use mlp::{schedule, MlpParams};
