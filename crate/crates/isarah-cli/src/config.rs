//! Experiment configs: a TOML file declares the problem, the start point,
//! the schedule (explicit numbers or a regime plus target), the ensemble
//! size, outputs, and which checks gate the exit code.

use std::fmt;
use std::path::{Path, PathBuf};

use isarah::diagnostics;
use isarah::oracle::StochasticOracle;
use isarah::problems::{
    load_libsvm, make_quadratic, ModifiedLogistic1D, NoisyQuadratic, QuadraticFiniteSum,
};
use isarah::schedules::{self, Regime};
use isarah::vector::WeightVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub solver: SolverName,
    pub replications: usize,
    pub seed_base: u64,
    pub problem: ProblemSpec,
    pub start: StartSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub checks: ChecksSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverName {
    /// Recursive estimator, mini-batch initial direction.
    Isarah,
    /// Recursive estimator, exact initial direction.
    Sarah,
    /// Anchored estimator, exact anchor gradient.
    Svrg,
    /// Plain mini-batch SGD at the schedule's step size.
    Sgd,
}

impl fmt::Display for SolverName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverName::Isarah => "isarah",
            SolverName::Sarah => "sarah",
            SolverName::Svrg => "svrg",
            SolverName::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Finite sum of diagonal quadratics: either generated (n, d, kappa,
    /// instance_seed) or explicit (diagonals, shifts).
    Quadratic {
        n: Option<usize>,
        d: Option<usize>,
        kappa: Option<f64>,
        instance_seed: Option<u64>,
        diagonals: Option<Vec<Vec<f64>>>,
        shifts: Option<Vec<Vec<f64>>>,
    },
    /// Expectation-form quadratic with Gaussian-perturbed center.
    NoisyQuadratic { curvature: Vec<f64>, center: Vec<f64>, noise_sd: Vec<f64> },
    /// l2-regularized logistic regression on a LIBSVM file. Constants come
    /// from the sidecar when it exists; otherwise the optimum is solved at
    /// load and the sidecar (when named) is written for next time.
    Logistic {
        data: PathBuf,
        l2: f64,
        constants_sidecar: Option<PathBuf>,
        #[serde(default = "default_grad_tol")]
        solve_grad_tol: f64,
    },
    /// 1-D piecewise objective with a growth bound and no strong convexity.
    ModifiedLogistic { lambda: f64 },
    /// 1-D non-convex finite sum of squared sigmoids, components (a_i, b_i).
    SigmoidMixture { coefficients: Vec<(f64, f64)> },
}

fn default_grad_tol() -> f64 {
    1e-10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    /// Explicit start coordinates.
    pub w0: Option<Vec<f64>>,
    /// Start at the stored optimum plus this offset (problems that know w*).
    pub offset_from_optimum: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub eta: Option<f64>,
    pub m: Option<usize>,
    pub b: Option<usize>,
    pub outer_loops: Option<usize>,
    pub regime: Option<String>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Directory for trace CSVs and the summary JSON.
    pub directory: PathBuf,
    /// Write one trace CSV per replication.
    pub trace: bool,
    /// Keep every step row even for long stages (default thins long stages
    /// to ~1e4 rows plus first/last).
    pub full_trace: bool,
    /// Log ||grad F||^2 at recorded steps (finite sums).
    pub record_full_grad: bool,
    /// Log F(w) at recorded steps (finite sums).
    pub record_value: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: PathBuf::from("."),
            trace: true,
            full_trace: false,
            record_full_grad: false,
            record_value: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSpec {
    /// Enumerate the mini-batch variance identity at the start point.
    pub identity: bool,
    /// Check the geometric decay of the recursive direction (needs mu).
    pub variance_decay: bool,
    /// Check per-stage contraction of the output gradient against the
    /// schedule's envelope.
    pub contraction: bool,
    /// One-sided Monte-Carlo margin for every check.
    pub margin_sigmas: f64,
    /// Replications for check ensembles (default: the experiment's; must be
    /// at least 2).
    pub check_replications: Option<usize>,
    /// Stages the contraction check runs (default: the schedule's stage
    /// count).
    pub stages: Option<usize>,
}

impl Default for ChecksSpec {
    fn default() -> Self {
        ChecksSpec {
            identity: false,
            variance_decay: false,
            contraction: false,
            margin_sigmas: 4.0,
            check_replications: None,
            stages: None,
        }
    }
}

impl ChecksSpec {
    pub fn any_enabled(&self) -> bool {
        self.identity || self.variance_decay || self.contraction
    }
}

/// Schedule with every number pinned down, ready to run. `regime`,
/// `epsilon`, and `provenance` survive only for reporting.
#[derive(Clone, Debug)]
pub struct ResolvedSchedule {
    pub eta: f64,
    pub m: usize,
    pub b: usize,
    pub outer_loops: usize,
    pub regime: Option<Regime>,
    pub epsilon: Option<f64>,
    pub provenance: Option<String>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{} does not parse: {e}", path.display())))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.replications < 1 {
        return Err(CliError::Config("replications must be at least 1".into()));
    }
    let s = &cfg.schedule;
    let explicit = s.eta.is_some() || s.b.is_some() || s.outer_loops.is_some();
    match (&s.regime, explicit) {
        (Some(_), true) => {
            return Err(CliError::Config(
                "schedule gives both a regime and explicit numbers; pick one form \
                 (regime [+ epsilon or m] or eta/m/b[/outer_loops])"
                    .into(),
            ));
        }
        (None, _) => {
            if s.eta.is_none() || s.m.is_none() || s.b.is_none() {
                return Err(CliError::Config(
                    "explicit schedule needs eta, m, and b (outer_loops defaults to 1); \
                     alternatively give a regime"
                        .into(),
                ));
            }
            if s.epsilon.is_some() {
                return Err(CliError::Config(
                    "epsilon only makes sense with a regime; an explicit schedule fixes \
                     all numbers itself"
                        .into(),
                ));
            }
        }
        (Some(_), false) => {}
    }
    let starts = cfg.start.w0.is_some() as u8 + cfg.start.offset_from_optimum.is_some() as u8;
    if starts != 1 {
        return Err(CliError::Config(
            "start needs exactly one of w0 or offset_from_optimum".into(),
        ));
    }
    if cfg.checks.any_enabled() {
        let reps = cfg.checks.check_replications.unwrap_or(cfg.replications);
        if reps < 2 {
            return Err(CliError::Config(
                "checks need at least 2 replications; raise replications or set \
                 checks.check_replications"
                    .into(),
            ));
        }
    }
    Ok(())
}

/// Builds the oracle plus a short description used in outputs.
pub fn build_problem(
    spec: &ProblemSpec,
) -> Result<(Box<dyn StochasticOracle>, String), CliError> {
    match spec {
        ProblemSpec::Quadratic { n, d, kappa, instance_seed, diagonals, shifts } => {
            let generated = n.is_some() || d.is_some() || kappa.is_some();
            let explicit = diagonals.is_some() || shifts.is_some();
            if generated == explicit {
                return Err(CliError::Config(
                    "quadratic needs either the generator form (n, d, kappa) or the \
                     explicit form (diagonals, shifts), not both"
                        .into(),
                ));
            }
            if explicit {
                let diagonals = diagonals.clone().ok_or_else(|| {
                    CliError::Config("explicit quadratic needs diagonals".into())
                })?;
                let shifts = shifts
                    .clone()
                    .ok_or_else(|| CliError::Config("explicit quadratic needs shifts".into()))?;
                let p = QuadraticFiniteSum::new(diagonals, shifts)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                let desc = format!("quadratic(n={}, d={})", p.n(), p.dim());
                Ok((Box::new(p), desc))
            } else {
                let (n, d, kappa) = (
                    n.ok_or_else(|| CliError::Config("generated quadratic needs n".into()))?,
                    d.ok_or_else(|| CliError::Config("generated quadratic needs d".into()))?,
                    kappa
                        .ok_or_else(|| CliError::Config("generated quadratic needs kappa".into()))?,
                );
                let seed = instance_seed.unwrap_or(0);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = make_quadratic(n, d, kappa, &mut rng)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                let desc = format!("quadratic(n={n}, d={d}, kappa={kappa}, instance_seed={seed})");
                Ok((Box::new(p), desc))
            }
        }
        ProblemSpec::NoisyQuadratic { curvature, center, noise_sd } => {
            let p = NoisyQuadratic::new(curvature.clone(), center.clone(), noise_sd.clone())
                .map_err(|e| CliError::Config(e.to_string()))?;
            let desc = format!("noisy-quadratic(d={})", curvature.len());
            Ok((Box::new(p), desc))
        }
        ProblemSpec::Logistic { data, l2, constants_sidecar, solve_grad_tol } => {
            let mut p =
                load_libsvm(data, *l2).map_err(|e| CliError::Config(e.to_string()))?;
            match constants_sidecar {
                Some(sidecar) if sidecar.exists() => {
                    p.load_constants_sidecar(sidecar)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                }
                Some(sidecar) => {
                    p.solve_optimum(*solve_grad_tol, 1_000_000)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    p.write_constants_sidecar(sidecar)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                }
                None => {
                    p.solve_optimum(*solve_grad_tol, 1_000_000)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                }
            }
            let desc = format!("logistic({}, l2={l2})", data.display());
            Ok((Box::new(p), desc))
        }
        ProblemSpec::ModifiedLogistic { lambda } => {
            let p = ModifiedLogistic1D::new(*lambda)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok((Box::new(p), format!("modified-logistic(lambda={lambda})")))
        }
        ProblemSpec::SigmoidMixture { coefficients } => {
            if coefficients.is_empty() {
                return Err(CliError::Config("sigmoid mixture needs components".into()));
            }
            let p = diagnostics::fixtures::SigmoidMixture::new(coefficients.clone());
            Ok((Box::new(p), format!("sigmoid-mixture(n={})", coefficients.len())))
        }
    }
}

pub fn resolve_start(
    start: &StartSpec,
    oracle: &dyn StochasticOracle,
) -> Result<WeightVector, CliError> {
    let coords = if let Some(w0) = &start.w0 {
        w0.clone()
    } else {
        let offset = start.offset_from_optimum.as_ref().expect("validated");
        let w_star = oracle.constants().w_star.as_ref().ok_or_else(|| {
            CliError::Config(
                "offset_from_optimum needs a problem with a stored optimum; \
                 give w0 explicitly"
                    .into(),
            )
        })?;
        if offset.len() != w_star.dim() {
            return Err(CliError::Config(format!(
                "offset has dimension {} but the problem has {}",
                offset.len(),
                w_star.dim()
            )));
        }
        w_star.iter().zip(offset).map(|(a, b)| a + b).collect()
    };
    if coords.len() != oracle.dim() {
        return Err(CliError::Config(format!(
            "start point has dimension {} but the problem has {}",
            coords.len(),
            oracle.dim()
        )));
    }
    Ok(WeightVector::new(coords))
}

/// Turns the schedule section into concrete numbers. Regime mode measures
/// the start-point scalars the rules need (exactly on finite sums, with a
/// held-out sample otherwise) and calls the library rule.
pub fn resolve_schedule(
    spec: &ScheduleSpec,
    oracle: &dyn StochasticOracle,
    w0: &WeightVector,
    seed_base: u64,
) -> Result<ResolvedSchedule, CliError> {
    if let Some(name) = &spec.regime {
        let regime: Regime = name.replace('_', "-").parse().map_err(CliError::Config)?;
        let c = oracle.constants();
        let delta_f = match regime {
            Regime::OneLoopConvex if spec.epsilon.is_some() => {
                let f_star = c.f_star.ok_or_else(|| {
                    CliError::Config(
                        "the epsilon-driven one-loop convex rule needs f_star".into(),
                    )
                })?;
                let f0 = oracle
                    .value_full(w0)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Some(f0 - f_star)
            }
            _ => None,
        };
        let grad0 = match regime {
            Regime::MultiLoopStronglyConvex | Regime::MultiLoopGrowthBound => Some(
                diagnostics::measured_grad_norm_sq(oracle, w0, seed_base)
                    .map_err(|e| CliError::Config(e.to_string()))?,
            ),
            _ => None,
        };
        let schedule = schedules::derive(c, regime, spec.epsilon, spec.m, delta_f, grad0)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(ResolvedSchedule {
            eta: schedule.eta,
            m: schedule.m,
            b: schedule.b,
            outer_loops: schedule.outer_loops,
            regime: Some(regime),
            epsilon: schedule.epsilon,
            provenance: Some(schedule.provenance),
        })
    } else {
        let (eta, m, b) =
            (spec.eta.expect("validated"), spec.m.expect("validated"), spec.b.expect("validated"));
        if !(eta.is_finite() && eta > 0.0) {
            return Err(CliError::Config(format!("eta must be positive, got {eta}")));
        }
        if m < 1 || b < 1 {
            return Err(CliError::Config("m and b must be at least 1".into()));
        }
        Ok(ResolvedSchedule {
            eta,
            m,
            b,
            outer_loops: spec.outer_loops.unwrap_or(1),
            regime: None,
            epsilon: None,
            provenance: None,
        })
    }
}
