//! Parameter schedules with provable guarantees.
//!
//! Each rule turns problem constants (and, where needed, runtime-measured
//! scalars the caller supplies) into a complete run configuration
//! (eta, m, b, T). Real-valued formulas are rounded conservatively: m, b and T
//! round up, which never weakens the guarantee the rule is built on.
//!
//! The two `alpha_*` functions expose the per-stage contraction factor of the
//! multi-stage rules. They accept real-valued m and b so the conservatism of
//! integer rounding can be checked directly against the unrounded values.

use crate::oracle::ProblemConstants;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Single stage, convex objective: drive the mean gradient norm to a
    /// target that shrinks like 1/sqrt(m+1).
    OneLoopConvex,
    /// Single stage, smooth possibly non-convex objective.
    OneLoopNonConvex,
    /// Multi-stage, strongly convex objective: geometric decay per stage down
    /// to a gradient-noise floor.
    MultiLoopStronglyConvex,
    /// Multi-stage, convex objective satisfying a growth bound
    /// F(w) - F* <= M ||grad F(w)||^2 + N.
    MultiLoopGrowthBound,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::OneLoopConvex => "one-loop-convex",
            Regime::OneLoopNonConvex => "one-loop-nonconvex",
            Regime::MultiLoopStronglyConvex => "multi-loop-strongly-convex",
            Regime::MultiLoopGrowthBound => "multi-loop-growth-bound",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one-loop-convex" => Ok(Regime::OneLoopConvex),
            "one-loop-nonconvex" => Ok(Regime::OneLoopNonConvex),
            "multi-loop-strongly-convex" => Ok(Regime::MultiLoopStronglyConvex),
            "multi-loop-growth-bound" => Ok(Regime::MultiLoopGrowthBound),
            other => Err(format!(
                "unknown regime '{other}'; expected one of one-loop-convex, \
                 one-loop-nonconvex, multi-loop-strongly-convex, multi-loop-growth-bound"
            )),
        }
    }
}

/// A complete run configuration produced by one of the schedule rules.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub eta: f64,
    /// Inner loop length (iterates w_0 ... w_m per stage).
    pub m: usize,
    /// Initial mini-batch size.
    pub b: usize,
    /// Number of chained stages.
    pub outer_loops: usize,
    pub regime: Regime,
    /// Target accuracy, for the epsilon-driven rules.
    pub epsilon: Option<f64>,
    /// Human-readable derivation: the formulas with the plugged-in numbers.
    pub provenance: String,
}

impl Schedule {
    /// Gradient evaluations one stage consumes: b + 2(m - 1). Saturates so
    /// budget arithmetic on absurd targets stays well defined.
    pub fn cost_per_stage(&self) -> u64 {
        (self.b as u64).saturating_add(2u64.saturating_mul(self.m as u64 - 1))
    }

    /// Scheduled total work across all stages.
    pub fn total_cost(&self) -> u64 {
        self.cost_per_stage().saturating_mul(self.outer_loops as u64)
    }
}

/// Per-stage contraction of the multi-stage rules: the mean squared gradient
/// norm after a stage is at most alpha times the one before it plus delta.
/// When alpha < 1 the fixed point delta / (1 - alpha) is the noise floor the
/// recursion settles at.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ContractionFactors {
    pub alpha: f64,
    pub delta: f64,
    pub fixed_point: Option<f64>,
}

impl ContractionFactors {
    fn new(alpha: f64, delta: f64) -> Self {
        let fixed_point = (alpha < 1.0).then(|| delta / (1.0 - alpha));
        ContractionFactors { alpha, delta, fixed_point }
    }

    /// Envelope after `s` stages from a start level g0:
    /// alpha^s g0 + delta (1 + alpha + ... + alpha^{s-1}).
    pub fn envelope(&self, g0: f64, s: u32) -> f64 {
        let mut level = g0;
        for _ in 0..s {
            level = self.alpha * level + self.delta;
        }
        level
    }
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("missing problem constant: {name} is required for the {rule} rule")]
    MissingConstant { name: &'static str, rule: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn require(
    value: Option<f64>,
    name: &'static str,
    rule: &'static str,
) -> Result<f64, ScheduleError> {
    value.ok_or(ScheduleError::MissingConstant { name, rule })
}

fn check_epsilon(epsilon: f64) -> Result<(), ScheduleError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(ScheduleError::InvalidArgument(format!(
            "target accuracy must be positive and finite, got {epsilon}"
        )));
    }
    Ok(())
}

/// Ceil to usize with a floor of 1.
fn ceil_at_least_one(x: f64) -> usize {
    if !(x.is_finite()) {
        return 1;
    }
    let c = x.ceil();
    if c < 1.0 {
        1
    } else {
        c as usize
    }
}

/// Number of halvings needed to bring g0 under 3/4 of epsilon, at least 1.
fn halving_stages(grad0_norm_sq: f64, epsilon: f64) -> usize {
    let t = (grad0_norm_sq / (0.75 * epsilon)).log2().ceil();
    if t.is_finite() && t >= 1.0 {
        t as usize
    } else {
        1
    }
}

/// Single-stage rule for convex objectives with the stage length chosen by
/// the caller: eta = 1/(L sqrt(m+1)), b = ceil(2 sqrt(m+1)), T = 1. The mean
/// squared gradient norm of the returned iterate is then at most
/// (6 L (F(w_0) - F*) + 2 sigma*^2) / sqrt(m+1).
pub fn one_loop_convex(c: &ProblemConstants, m: usize) -> Result<Schedule, ScheduleError> {
    if m == 0 {
        return Err(ScheduleError::InvalidArgument("m must be at least 1".into()));
    }
    let l = c.lipschitz;
    let sqrt = ((m + 1) as f64).sqrt();
    let eta = 1.0 / (l * sqrt);
    let b = ceil_at_least_one(2.0 * sqrt);
    Ok(Schedule {
        eta,
        m,
        b,
        outer_loops: 1,
        regime: Regime::OneLoopConvex,
        epsilon: None,
        provenance: format!(
            "one-loop convex rule: eta = 1/(L sqrt(m+1)) = {eta}, \
             b = ceil(2 sqrt(m+1)) = {b}, T = 1 (L = {l}, m = {m})"
        ),
    })
}

/// Epsilon-driven variant of the single-stage convex rule. The caller supplies
/// delta_f = F(w_0) - F*, measured at the actual start point; the stage length
/// comes from requiring (6 L delta_f + 2 sigma*^2) / sqrt(m+1) <= epsilon,
/// i.e. m + 1 = ceil(((6 L delta_f + 2 sigma*^2) / epsilon)^2).
pub fn one_loop_convex_for_epsilon(
    c: &ProblemConstants,
    epsilon: f64,
    delta_f: f64,
) -> Result<Schedule, ScheduleError> {
    check_epsilon(epsilon)?;
    if !(delta_f.is_finite() && delta_f >= 0.0) {
        return Err(ScheduleError::InvalidArgument(format!(
            "initial suboptimality delta_f must be non-negative and finite, got {delta_f}"
        )));
    }
    let sigma_sq = require(c.sigma_star_sq, "sigma_star_sq", "one-loop convex")?;
    let numerator = 6.0 * c.lipschitz * delta_f + 2.0 * sigma_sq;
    let m_plus_1 = ceil_at_least_one((numerator / epsilon).powi(2));
    let m = (m_plus_1 - 1).max(1);
    let mut schedule = one_loop_convex(c, m)?;
    schedule.epsilon = Some(epsilon);
    schedule.provenance = format!(
        "one-loop convex rule for target {epsilon}: m+1 = ceil(((6 L dF + 2 sigma*^2)/eps)^2) \
         = {m_plus_1} with dF = {delta_f}; then {}",
        schedule.provenance
    );
    Ok(schedule)
}

/// Single-stage rule for smooth (possibly non-convex) objectives:
/// eta = 2 / (L (sqrt(1 + 4m) + 1)), the positive root of
/// L^2 eta^2 m - (1 - L eta) = 0, with b = ceil(sqrt(m+1)) and T = 1.
pub fn one_loop_nonconvex(c: &ProblemConstants, m: usize) -> Result<Schedule, ScheduleError> {
    if m == 0 {
        return Err(ScheduleError::InvalidArgument("m must be at least 1".into()));
    }
    let l = c.lipschitz;
    let eta = 2.0 / (l * ((1.0 + 4.0 * m as f64).sqrt() + 1.0));
    let b = ceil_at_least_one(((m + 1) as f64).sqrt());
    Ok(Schedule {
        eta,
        m,
        b,
        outer_loops: 1,
        regime: Regime::OneLoopNonConvex,
        epsilon: None,
        provenance: format!(
            "one-loop non-convex rule: eta = 2/(L (sqrt(1+4m)+1)) = {eta}, \
             b = ceil(sqrt(m+1)) = {b}, T = 1 (L = {l}, m = {m})"
        ),
    })
}

/// Multi-stage rule for strongly convex objectives: eta = 2/(5L),
/// m = ceil(20 kappa - 1), b = ceil(max(20 kappa - 10, 20 sigma*^2 / epsilon)),
/// which makes the per-stage contraction factor exactly 1/2 (before rounding)
/// with noise floor at most epsilon/8 per stage. The caller supplies the
/// squared full-gradient norm at the start point, which sets the number of
/// halvings T = ceil(log2(g0 / (3/4 epsilon))).
pub fn multi_loop_strongly_convex(
    c: &ProblemConstants,
    epsilon: f64,
    grad0_norm_sq: f64,
) -> Result<Schedule, ScheduleError> {
    check_epsilon(epsilon)?;
    if !(grad0_norm_sq.is_finite() && grad0_norm_sq >= 0.0) {
        return Err(ScheduleError::InvalidArgument(format!(
            "grad0_norm_sq must be non-negative and finite, got {grad0_norm_sq}"
        )));
    }
    let l = c.lipschitz;
    let mu = require(c.mu, "mu", "multi-loop strongly convex")?;
    let sigma_sq = require(c.sigma_star_sq, "sigma_star_sq", "multi-loop strongly convex")?;
    let kappa = l / mu;

    let eta = 2.0 / (5.0 * l);
    let m = ceil_at_least_one(20.0 * kappa - 1.0);
    let b = ceil_at_least_one((20.0 * kappa - 10.0).max(20.0 * sigma_sq / epsilon));
    let outer_loops = halving_stages(grad0_norm_sq, epsilon);

    Ok(Schedule {
        eta,
        m,
        b,
        outer_loops,
        regime: Regime::MultiLoopStronglyConvex,
        epsilon: Some(epsilon),
        provenance: format!(
            "multi-loop strongly convex rule: eta = 2/(5L) = {eta}, \
             m = ceil(20 kappa - 1) = {m}, \
             b = ceil(max(20 kappa - 10, 20 sigma*^2/eps)) = {b}, \
             T = ceil(log2(g0/(0.75 eps))) = {outer_loops} \
             (L = {l}, kappa = {kappa}, sigma*^2 = {sigma_sq}, g0 = {grad0_norm_sq}, \
             eps = {epsilon})"
        ),
    })
}

/// Multi-stage rule for convex objectives under the growth bound
/// F(w) - F* <= M ||grad F(w)||^2 + N: eta = 2/(5L),
/// m = ceil(max(40 L M - 1, 120 L N / epsilon - 1)),
/// b = ceil(max(40 L M - 5, 120 L N / epsilon, 60 sigma*^2 / epsilon)),
/// again contracting by 1/2 per stage down to a floor below epsilon.
pub fn multi_loop_growth_bound(
    c: &ProblemConstants,
    epsilon: f64,
    grad0_norm_sq: f64,
) -> Result<Schedule, ScheduleError> {
    check_epsilon(epsilon)?;
    if !(grad0_norm_sq.is_finite() && grad0_norm_sq >= 0.0) {
        return Err(ScheduleError::InvalidArgument(format!(
            "grad0_norm_sq must be non-negative and finite, got {grad0_norm_sq}"
        )));
    }
    let l = c.lipschitz;
    let gm = require(c.growth_m, "growth_m", "multi-loop growth bound")?;
    let gn = require(c.growth_n, "growth_n", "multi-loop growth bound")?;
    let sigma_sq = require(c.sigma_star_sq, "sigma_star_sq", "multi-loop growth bound")?;

    let eta = 2.0 / (5.0 * l);
    let m = ceil_at_least_one((40.0 * l * gm - 1.0).max(120.0 * l * gn / epsilon - 1.0));
    let b = ceil_at_least_one(
        (40.0 * l * gm - 5.0)
            .max(120.0 * l * gn / epsilon)
            .max(60.0 * sigma_sq / epsilon),
    );
    let outer_loops = halving_stages(grad0_norm_sq, epsilon);

    Ok(Schedule {
        eta,
        m,
        b,
        outer_loops,
        regime: Regime::MultiLoopGrowthBound,
        epsilon: Some(epsilon),
        provenance: format!(
            "multi-loop growth-bound rule: eta = 2/(5L) = {eta}, \
             m = ceil(max(40LM - 1, 120LN/eps - 1)) = {m}, \
             b = ceil(max(40LM - 5, 120LN/eps, 60 sigma*^2/eps)) = {b}, \
             T = ceil(log2(g0/(0.75 eps))) = {outer_loops} \
             (L = {l}, M = {gm}, N = {gn}, sigma*^2 = {sigma_sq}, g0 = {grad0_norm_sq}, \
             eps = {epsilon})"
        ),
    })
}

fn check_eta_window(eta: f64, l: f64) -> Result<(), ScheduleError> {
    if !(eta.is_finite() && eta > 0.0 && eta * l < 2.0) {
        return Err(ScheduleError::InvalidArgument(format!(
            "contraction factors need 0 < eta < 2/L, got eta = {eta} with L = {l}"
        )));
    }
    Ok(())
}

/// Contraction factor of the strongly convex multi-stage recursion:
/// alpha = 1/(mu eta (m+1)) + eta L/(2 - eta L) + (4 kappa - 2)/(b (2 - eta L)),
/// delta = 4 sigma*^2 / (b (2 - eta L)).
pub fn alpha_strongly_convex(
    eta: f64,
    m: f64,
    b: f64,
    c: &ProblemConstants,
) -> Result<ContractionFactors, ScheduleError> {
    check_eta_window(eta, c.lipschitz)?;
    if !(m >= 1.0 && b >= 1.0) {
        return Err(ScheduleError::InvalidArgument(format!(
            "need m >= 1 and b >= 1, got m = {m}, b = {b}"
        )));
    }
    let l = c.lipschitz;
    let mu = require(c.mu, "mu", "strongly convex contraction")?;
    let sigma_sq = require(c.sigma_star_sq, "sigma_star_sq", "strongly convex contraction")?;
    let kappa = l / mu;
    let alpha = 1.0 / (mu * eta * (m + 1.0))
        + eta * l / (2.0 - eta * l)
        + (4.0 * kappa - 2.0) / (b * (2.0 - eta * l));
    let delta = 4.0 * sigma_sq / (b * (2.0 - eta * l));
    Ok(ContractionFactors::new(alpha, delta))
}

/// Contraction factor of the growth-bound multi-stage recursion:
/// alpha = 2M/(eta (m+1)) + eta L/(2 - eta L) + (8LM - 1)/(b (2 - eta L)),
/// delta = 2N/(eta (m+1)) + 8LN/(b (2 - eta L)) + 4 sigma*^2/(b (2 - eta L)).
pub fn alpha_growth_bound(
    eta: f64,
    m: f64,
    b: f64,
    c: &ProblemConstants,
) -> Result<ContractionFactors, ScheduleError> {
    check_eta_window(eta, c.lipschitz)?;
    if !(m >= 1.0 && b >= 1.0) {
        return Err(ScheduleError::InvalidArgument(format!(
            "need m >= 1 and b >= 1, got m = {m}, b = {b}"
        )));
    }
    let l = c.lipschitz;
    let gm = require(c.growth_m, "growth_m", "growth-bound contraction")?;
    let gn = require(c.growth_n, "growth_n", "growth-bound contraction")?;
    let sigma_sq = require(c.sigma_star_sq, "sigma_star_sq", "growth-bound contraction")?;
    let denom = 2.0 - eta * l;
    let alpha = 2.0 * gm / (eta * (m + 1.0)) + eta * l / denom + (8.0 * l * gm - 1.0) / (b * denom);
    let delta =
        2.0 * gn / (eta * (m + 1.0)) + 8.0 * l * gn / (b * denom) + 4.0 * sigma_sq / (b * denom);
    Ok(ContractionFactors::new(alpha, delta))
}

/// Derives a schedule for the given regime. `epsilon_or_m` carries the
/// epsilon-driven or m-driven parameterization; the measured scalars are only
/// read by the rules that need them.
pub fn derive(
    c: &ProblemConstants,
    regime: Regime,
    epsilon: Option<f64>,
    m: Option<usize>,
    delta_f: Option<f64>,
    grad0_norm_sq: Option<f64>,
) -> Result<Schedule, ScheduleError> {
    match (regime, epsilon, m) {
        (Regime::OneLoopConvex, None, Some(m)) => one_loop_convex(c, m),
        (Regime::OneLoopConvex, Some(eps), None) => {
            let df = delta_f.ok_or(ScheduleError::InvalidArgument(
                "the epsilon-driven one-loop convex rule needs the measured initial \
                 suboptimality delta_f"
                    .into(),
            ))?;
            one_loop_convex_for_epsilon(c, eps, df)
        }
        (Regime::OneLoopNonConvex, None, Some(m)) => one_loop_nonconvex(c, m),
        (Regime::MultiLoopStronglyConvex, Some(eps), None) => {
            let g0 = grad0_norm_sq.ok_or(ScheduleError::InvalidArgument(
                "the multi-loop rules need the measured squared gradient norm at the start point"
                    .into(),
            ))?;
            multi_loop_strongly_convex(c, eps, g0)
        }
        (Regime::MultiLoopGrowthBound, Some(eps), None) => {
            let g0 = grad0_norm_sq.ok_or(ScheduleError::InvalidArgument(
                "the multi-loop rules need the measured squared gradient norm at the start point"
                    .into(),
            ))?;
            multi_loop_growth_bound(c, eps, g0)
        }
        (Regime::OneLoopNonConvex, Some(_), None) => Err(ScheduleError::InvalidArgument(
            "the one-loop non-convex rule is parameterized by m, not epsilon".into(),
        )),
        (_, Some(_), Some(_)) => Err(ScheduleError::InvalidArgument(
            "give either epsilon or m, not both".into(),
        )),
        (_, None, Some(_)) => Err(ScheduleError::InvalidArgument(
            "the multi-loop rules are parameterized by epsilon, not m".into(),
        )),
        (_, None, None) => {
            Err(ScheduleError::InvalidArgument("give either epsilon or m".into()))
        }
    }
}
