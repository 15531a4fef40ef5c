//! Built-in test objectives.
//!
//! Each problem implements [`StochasticOracle`](crate::oracle::StochasticOracle)
//! and carries its analytic constants (smoothness, strong convexity, optimum,
//! gradient noise at the optimum) so schedules and bound checks can be driven
//! from known ground truth.

mod logistic;
mod modified_logistic;
mod noisy_quadratic;
mod quadratic;

pub use logistic::{load_libsvm, ConstantsSidecar, LogisticProblem};
pub use modified_logistic::ModifiedLogistic1D;
pub use noisy_quadratic::NoisyQuadratic;
pub use quadratic::{make_quadratic, QuadraticFiniteSum};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("dataset error: {0}")]
    Data(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "optimum solve stalled: gradient norm {achieved:e} after {iterations} iterations \
         (target {target:e})"
    )]
    NoConvergence { achieved: f64, target: f64, iterations: usize },
}
