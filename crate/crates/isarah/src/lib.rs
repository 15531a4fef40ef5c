//! Variance-reduced stochastic gradient methods built around a recursive
//! direction estimate whose initial direction may itself be inexact: a
//! mini-batch mean instead of a full gradient pass. The library provides
//!
//! - the solvers: the recursive estimator with exact or mini-batch starts,
//!   the anchored (snapshot) estimator for comparison, and plain SGD
//!   ([`solvers`]);
//! - parameter rules that turn problem constants (L, mu, sigma*^2, growth
//!   bounds) and a target accuracy into step size, stage length, initial
//!   batch size, and stage count, together with the contraction factors the
//!   rules guarantee ([`schedules`]);
//! - a diagnostics layer that measures what the analysis bounds: exact
//!   mini-batch variance enumeration, geometric decay of the direction
//!   norm, per-stage contraction envelopes, output-gradient bounds, and
//!   work-versus-accuracy slopes, each packaged as a pass/fail check with a
//!   Monte-Carlo noise margin ([`diagnostics`]);
//! - built-in problems with certified constants: finite-sum quadratics,
//!   expectation-form noisy quadratics, l2-regularized logistic regression
//!   (libsvm loader included), and a piecewise 1-D objective satisfying a
//!   gradient-growth condition without strong convexity ([`problems`]).
//!
//! Everything randomized draws from role-separated, seedable streams
//! ([`oracle::RngStreams`]), so every run, trace, and Monte-Carlo estimate
//! reproduces bit-exactly from its seed.

pub mod diagnostics;
pub mod oracle;
pub mod problems;
pub mod schedules;
pub mod solvers;
pub mod vector;

pub use diagnostics::{BoundCheck, DiagnosticsError, MonteCarloEstimate};
pub use oracle::{ProblemConstants, RngStreams, SampleId, StochasticOracle};
pub use schedules::{Regime, Schedule, ScheduleError};
pub use solvers::{EstimatorKind, RunTrace, SolverError, TraceOptions, V0Mode};
pub use vector::WeightVector;
