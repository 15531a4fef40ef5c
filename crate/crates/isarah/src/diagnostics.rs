//! Monte-Carlo measurement of the quantities the convergence analysis bounds,
//! checked against the closed-form bounds.
//!
//! Every check follows the same pattern: run a seeded ensemble of
//! replications, estimate an expectation, and compare it one-sidedly against
//! the bound with a sigma margin for Monte-Carlo noise. A 4-sigma margin keeps
//! the false-failure probability per check below 1e-4. All ensembles are
//! bit-reproducible from their seed base.
//!
//! On finite sums full-objective quantities are exact; on expectation-form
//! objectives the squared full-gradient norm is estimated with a held-out
//! sample on a dedicated stream, which biases the measurement upward (never in
//! the check's favor).

use crate::oracle::{OracleError, ProblemConstants, RngStreams, SampleId, StochasticOracle};
use crate::schedules::{self, ContractionFactors, Regime, Schedule, ScheduleError};
use crate::solvers::{
    variance_reduced_outer, EstimatorKind, SolverError, TraceOptions, V0Mode,
};
use crate::vector::WeightVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

/// Largest number of ordered sample tuples `minibatch_variance_identity` will
/// enumerate.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Held-out sample size used to estimate full-gradient norms on
/// expectation-form objectives.
pub const HELD_OUT_SAMPLE: usize = 10_000;

/// Sum with Neumaier compensation: accumulation error stays at a couple of
/// ulps regardless of the number of terms, which the exactness tolerances on
/// the enumeration checks rely on.
fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    /// Seed the replication ensemble was derived from; fixes the estimate
    /// bit-exactly.
    pub seed_base: u64,
}

impl MonteCarloEstimate {
    pub fn from_samples(samples: &[f64], seed_base: u64) -> Self {
        assert!(samples.len() >= 2, "a Monte-Carlo estimate needs at least two replications");
        let n = samples.len() as f64;
        let mean = compensated_sum(samples.iter().copied()) / n;
        let ss = compensated_sum(samples.iter().map(|&x| (x - mean) * (x - mean)));
        MonteCarloEstimate {
            mean,
            std_error: (ss / (n - 1.0) / n).sqrt(),
            replications: samples.len(),
            seed_base,
        }
    }

    /// An ensemble whose members are all the same deterministic value, e.g. a
    /// quantity measured before any randomness has acted. Exact, zero error.
    pub fn exact(value: f64, replications: usize, seed_base: u64) -> Self {
        MonteCarloEstimate { mean: value, std_error: 0.0, replications, seed_base }
    }
}

/// One measured-versus-bound comparison. The verdict is a pure function of
/// (mean, bound, margin, std_error): pass iff
/// mean <= bound + margin_sigmas * std_error.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub label: String,
    pub measured: MonteCarloEstimate,
    pub bound: f64,
    pub margin_sigmas: f64,
    pub passed: bool,
    /// Where the bound comes from: the formula with its plugged-in numbers.
    pub provenance: String,
}

impl BoundCheck {
    pub fn evaluate(
        label: impl Into<String>,
        measured: MonteCarloEstimate,
        bound: f64,
        margin_sigmas: f64,
        provenance: impl Into<String>,
    ) -> Self {
        let passed = measured.mean <= bound + margin_sigmas * measured.std_error;
        BoundCheck {
            label: label.into(),
            measured,
            bound,
            margin_sigmas,
            passed,
            provenance: provenance.into(),
        }
    }

    /// Distance to failure: how far the mean sits below the margin-adjusted
    /// bound (negative when the check fails).
    pub fn slack(&self) -> f64 {
        self.bound + self.margin_sigmas * self.measured.std_error - self.measured.mean
    }
}

impl std::fmt::Display for BoundCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: mean {:.6e} vs bound {:.6e} + {} sigma (se {:.2e}, {} reps)",
            if self.passed { "PASS" } else { "FAIL" },
            self.label,
            self.measured.mean,
            self.bound,
            self.margin_sigmas,
            self.measured.std_error,
            self.measured.replications
        )
    }
}

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("enumerating {tuples} sample tuples exceeds the limit of {limit}")]
    EnumerationTooLarge { tuples: u128, limit: u128 },
    #[error(
        "target {target} not reached: measured mean {achieved} after {work} gradient \
         evaluations (budget {budget})"
    )]
    NoConvergence { target: f64, achieved: f64, work: u64, budget: u64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn require_reps(replications: usize) -> Result<(), DiagnosticsError> {
    if replications < 2 {
        return Err(DiagnosticsError::InvalidArgument(
            "Monte-Carlo checks need at least 2 replications".into(),
        ));
    }
    Ok(())
}

/// Generator for held-out gradient samples: same master seed as the solver
/// streams but stream id 3, disjoint from the three solver roles.
fn held_out_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    rng
}

/// ||grad F(w)||^2 as the checks measure it: exact on finite sums, held-out
/// sample mean otherwise, seeded so callers stay reproducible.
pub fn measured_grad_norm_sq<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w: &WeightVector,
    seed: u64,
) -> Result<f64, DiagnosticsError> {
    output_grad_norm_sq(oracle, w, &mut held_out_rng(seed))
}

/// ||grad F(w)||^2: exact on finite sums, held-out sample mean otherwise.
fn output_grad_norm_sq<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w: &WeightVector,
    held_out: &mut ChaCha8Rng,
) -> Result<f64, DiagnosticsError> {
    match oracle.grad_full(w) {
        Ok(g) => Ok(g.norm_sq()),
        Err(OracleError::NotFiniteSum { .. }) => {
            Ok(oracle.grad_minibatch(w, HELD_OUT_SAMPLE, held_out)?.norm_sq())
        }
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------------------
// Mini-batch variance identity
// ---------------------------------------------------------------------------

/// Both sides of the mini-batch variance identity at one point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct VarianceIdentity {
    /// E || (1/b) sum grad f(w; xi_i) - grad F(w) ||^2 by full enumeration of
    /// all ordered tuples.
    pub enumerated: f64,
    /// (E ||grad f(w; xi)||^2 - ||grad F(w)||^2) / b from single-sample
    /// moments.
    pub predicted: f64,
    pub tuples: u128,
    pub batch: usize,
}

impl VarianceIdentity {
    pub fn gap(&self) -> f64 {
        (self.enumerated - self.predicted).abs()
    }
}

/// Verifies the variance of a mean of b i.i.d. uniform component gradients by
/// brute force: enumerates all n^b equiprobable ordered tuples and compares
/// with the single-sample moment formula. The identity is exact; the two
/// sides differ only by accumulation error.
pub fn minibatch_variance_identity<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w: &WeightVector,
    batch: usize,
) -> Result<VarianceIdentity, DiagnosticsError> {
    let n = oracle
        .n_components()
        .ok_or(OracleError::NotFiniteSum { op: "mini-batch variance enumeration" })?;
    if batch == 0 {
        return Err(OracleError::EmptyBatch.into());
    }
    let mut tuples: u128 = 1;
    for _ in 0..batch {
        tuples = tuples.saturating_mul(n as u128);
        if tuples > ENUMERATION_LIMIT {
            return Err(DiagnosticsError::EnumerationTooLarge {
                tuples,
                limit: ENUMERATION_LIMIT,
            });
        }
    }

    let grads: Vec<WeightVector> =
        (0..n).map(|i| oracle.grad_sample(w, SampleId::new(i as u64))).collect();
    let full = oracle.grad_full(w)?;
    let full_sq = full.norm_sq();
    let second_moment = compensated_sum(grads.iter().map(|g| g.norm_sq())) / n as f64;
    let predicted = (second_moment - full_sq) / batch as f64;

    let d = oracle.dim();
    let mut idx = vec![0usize; batch];
    let mut acc = vec![0.0f64; d];
    let mut total = 0.0f64;
    let mut comp = 0.0f64;
    loop {
        acc.fill(0.0);
        for &i in &idx {
            for (a, g) in acc.iter_mut().zip(grads[i].iter()) {
                *a += g;
            }
        }
        let mut dev = 0.0f64;
        for (a, f) in acc.iter().zip(full.iter()) {
            let diff = a / batch as f64 - f;
            dev += diff * diff;
        }
        // Neumaier step inlined over the tuple loop.
        let t = total + dev;
        if total.abs() >= dev.abs() {
            comp += (total - t) + dev;
        } else {
            comp += (dev - t) + total;
        }
        total = t;

        // Advance the odometer over ordered tuples.
        let mut pos = 0;
        loop {
            if pos == batch {
                let enumerated = (total + comp) / tuples as f64;
                return Ok(VarianceIdentity { enumerated, predicted, tuples, batch });
            }
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Geometric decay of the recursive direction
// ---------------------------------------------------------------------------

/// Per-step factor of the recursive direction's decay:
/// rho = 1 - (2/(eta L) - 1) mu^2 eta^2, valid for 0 < eta < 2/L on strongly
/// convex problems with convex components. At eta = 1/L this is 1 - 1/kappa^2.
pub fn variance_decay_rate(eta: f64, c: &ProblemConstants) -> Result<f64, DiagnosticsError> {
    let l = c.lipschitz;
    if !(eta.is_finite() && eta > 0.0 && eta * l < 2.0) {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "the decay rate needs 0 < eta < 2/L, got eta = {eta} with L = {l}"
        )));
    }
    let mu = c
        .mu
        .ok_or(ScheduleError::MissingConstant { name: "mu", rule: "variance decay" })?;
    Ok(1.0 - (2.0 / (eta * l) - 1.0) * mu * mu * eta * eta)
}

/// Monte-Carlo profile of ||v_t||^2 across an inner stage, conditioned on the
/// initial direction: the initial-batch stream is pinned to `seed_base` for
/// every replication (so v_0 is one fixed vector) and only the per-step sample
/// stream varies.
#[derive(Clone, Debug, Serialize)]
pub struct DecayProfile {
    /// ||v_0||^2, identical across the ensemble by construction.
    pub v0_norm_sq: f64,
    /// Estimates for t = 1, ..., m-1 as (t, estimate) pairs.
    pub per_step: Vec<(usize, MonteCarloEstimate)>,
    pub replications: usize,
    pub seed_base: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn variance_decay_profile<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    estimator: EstimatorKind,
    v0_mode: V0Mode,
    eta: f64,
    m: usize,
    replications: usize,
    seed_base: u64,
) -> Result<DecayProfile, DiagnosticsError> {
    require_reps(replications)?;
    let opts = TraceOptions::default();
    let mut per_t: Vec<Vec<f64>> = vec![Vec::with_capacity(replications); m];
    for rep in 0..replications {
        let mut streams =
            RngStreams::from_role_seeds(seed_base, seed_base + 1 + rep as u64, seed_base);
        let (_, trace) = variance_reduced_outer(
            oracle, w0, estimator, v0_mode, eta, m, 1, &mut streams, &opts,
        )?;
        assert_eq!(trace.steps.len(), m, "unthinned stage must log every step");
        for rec in &trace.steps {
            per_t[rec.t].push(rec.v_norm_sq);
        }
    }
    let v0 = per_t[0][0];
    assert!(
        per_t[0].iter().all(|x| x.to_bits() == v0.to_bits()),
        "the pinned batch stream must give one identical v_0 across replications"
    );
    let per_step = (1..m)
        .map(|t| (t, MonteCarloEstimate::from_samples(&per_t[t], seed_base)))
        .collect();
    Ok(DecayProfile { v0_norm_sq: v0, per_step, replications, seed_base })
}

/// Checks the recursive direction's geometric decay: for every t >= 1 the
/// ensemble mean of ||v_t||^2 must sit below rho^t ||v_0||^2 (conditioned on
/// the pinned v_0). Returns the single tightest step: the t with the least
/// slack, which fails iff any step fails.
#[allow(clippy::too_many_arguments)]
pub fn variance_decay_check<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    v0_mode: V0Mode,
    eta: f64,
    m: usize,
    replications: usize,
    seed_base: u64,
    margin_sigmas: f64,
) -> Result<BoundCheck, DiagnosticsError> {
    if m < 2 {
        return Err(DiagnosticsError::InvalidArgument(
            "the decay check needs m >= 2 so at least one recursive step exists".into(),
        ));
    }
    let rate = variance_decay_rate(eta, oracle.constants())?;
    let profile = variance_decay_profile(
        oracle,
        w0,
        EstimatorKind::Recursive,
        v0_mode,
        eta,
        m,
        replications,
        seed_base,
    )?;
    let mut worst: Option<BoundCheck> = None;
    for (t, est) in &profile.per_step {
        let bound = rate.powi(*t as i32) * profile.v0_norm_sq;
        let check = BoundCheck::evaluate(
            format!("recursive direction decay at t = {t}"),
            est.clone(),
            bound,
            margin_sigmas,
            format!(
                "E||v_t||^2 <= [1 - (2/(eta L) - 1) mu^2 eta^2]^t ||v_0||^2 \
                 with rate {rate} and ||v_0||^2 = {}",
                profile.v0_norm_sq
            ),
        );
        if worst.as_ref().is_none_or(|w| check.slack() < w.slack()) {
            worst = Some(check);
        }
    }
    Ok(worst.expect("m >= 2 guarantees at least one recursive step"))
}

// ---------------------------------------------------------------------------
// One-loop output bounds
// ---------------------------------------------------------------------------

/// Runs `replications` fresh-seeded ensembles (every stream re-seeded per
/// replication, including the returned-index draw) and measures
/// ||grad F||^2 at each final output. Also returns the per-run evaluation
/// count, which is the same deterministic number for every replication.
#[allow(clippy::too_many_arguments)]
fn grad_norm_ensemble<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    estimator: EstimatorKind,
    v0_mode: V0Mode,
    eta: f64,
    m: usize,
    outer_loops: usize,
    replications: usize,
    seed_base: u64,
) -> Result<(Vec<f64>, u64), DiagnosticsError> {
    let opts = TraceOptions::none();
    let mut samples = Vec::with_capacity(replications);
    let mut work = 0u64;
    for rep in 0..replications {
        let seed = seed_base.wrapping_add(rep as u64);
        let mut streams = RngStreams::from_seed(seed);
        let (w_out, trace) = variance_reduced_outer(
            oracle, w0, estimator, v0_mode, eta, m, outer_loops, &mut streams, &opts,
        )?;
        samples.push(output_grad_norm_sq(oracle, &w_out, &mut held_out_rng(seed))?);
        debug_assert!(rep == 0 || work == trace.grad_evals);
        work = trace.grad_evals;
    }
    Ok((samples, work))
}

/// Checks the one-loop convex guarantee: under the schedule
/// eta = 1/(L sqrt(m+1)), b = ceil(2 sqrt(m+1)), the returned iterate
/// satisfies E||grad F(w~)||^2 <= (6 L (F(w0) - F*) + 2 sigma*^2)/sqrt(m+1).
/// Finite sums only (the start value and output gradients are exact).
pub fn one_loop_convex_bound_check<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    m: usize,
    replications: usize,
    seed_base: u64,
    margin_sigmas: f64,
) -> Result<BoundCheck, DiagnosticsError> {
    require_reps(replications)?;
    let c = oracle.constants();
    let schedule = schedules::one_loop_convex(c, m)?;
    let sigma_sq = c.sigma_star_sq.ok_or(ScheduleError::MissingConstant {
        name: "sigma_star_sq",
        rule: "one-loop convex bound",
    })?;
    let f_star = c
        .f_star
        .ok_or(ScheduleError::MissingConstant { name: "f_star", rule: "one-loop convex bound" })?;
    let delta_f = oracle.value_full(w0)? - f_star;
    let bound = (6.0 * c.lipschitz * delta_f + 2.0 * sigma_sq) / ((m + 1) as f64).sqrt();
    let (samples, _) = grad_norm_ensemble(
        oracle,
        w0,
        EstimatorKind::Recursive,
        V0Mode::Minibatch(schedule.b),
        schedule.eta,
        schedule.m,
        1,
        replications,
        seed_base,
    )?;
    Ok(BoundCheck::evaluate(
        format!("one-loop convex output gradient, m = {m}"),
        MonteCarloEstimate::from_samples(&samples, seed_base),
        bound,
        margin_sigmas,
        format!(
            "E||grad F(w~)||^2 <= (6 L (F(w0) - F*) + 2 sigma*^2)/sqrt(m+1) = {bound} \
             (L = {}, F(w0) - F* = {delta_f}, sigma*^2 = {sigma_sq})",
            c.lipschitz
        ),
    ))
}

/// Checks the one-loop guarantee that needs no convexity: under
/// eta = 2/(L (sqrt(1+4m)+1)), b = ceil(sqrt(m+1)), the returned iterate
/// satisfies E||grad F(w~)||^2 <=
/// (2/(eta (m+1))) (F(w0) - F*) + E||grad f(w0; xi)||^2 / sqrt(m+1),
/// where F* is any lower bound on F. The start-point second moment is exact
/// on finite sums.
pub fn one_loop_nonconvex_bound_check<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    m: usize,
    replications: usize,
    seed_base: u64,
    margin_sigmas: f64,
) -> Result<BoundCheck, DiagnosticsError> {
    require_reps(replications)?;
    let c = oracle.constants();
    let schedule = schedules::one_loop_nonconvex(c, m)?;
    let f_star = c.f_star.ok_or(ScheduleError::MissingConstant {
        name: "f_star",
        rule: "one-loop non-convex bound",
    })?;
    let delta_f = oracle.value_full(w0)? - f_star;
    let n = oracle
        .n_components()
        .ok_or(OracleError::NotFiniteSum { op: "start-point second moment" })?;
    let second_moment = compensated_sum(
        (0..n).map(|i| oracle.grad_sample(w0, SampleId::new(i as u64)).norm_sq()),
    ) / n as f64;
    let bound = 2.0 / (schedule.eta * (m + 1) as f64) * delta_f
        + second_moment / ((m + 1) as f64).sqrt();
    let (samples, _) = grad_norm_ensemble(
        oracle,
        w0,
        EstimatorKind::Recursive,
        V0Mode::Minibatch(schedule.b),
        schedule.eta,
        schedule.m,
        1,
        replications,
        seed_base,
    )?;
    Ok(BoundCheck::evaluate(
        format!("one-loop non-convex output gradient, m = {m}"),
        MonteCarloEstimate::from_samples(&samples, seed_base),
        bound,
        margin_sigmas,
        format!(
            "E||grad F(w~)||^2 <= 2 (F(w0) - F*)/(eta (m+1)) + E||grad f(w0; xi)||^2/sqrt(m+1) \
             = {bound} (F(w0) - F* = {delta_f}, E||grad f(w0; xi)||^2 = {second_moment})"
        ),
    ))
}

// ---------------------------------------------------------------------------
// Multi-stage contraction
// ---------------------------------------------------------------------------

/// Per-stage envelope the multi-stage ensemble is checked against.
#[derive(Clone, Copy, Debug)]
pub enum Envelope {
    /// bound_s = alpha^s g0 + delta (1 + alpha + ... + alpha^{s-1}); requires
    /// alpha < 1.
    Geometric(ContractionFactors),
    /// bound_s = g0 / 2^s + eps/4: the designed decay of the strongly convex
    /// multi-stage rule, whose factors are alpha <= 1/2 and floor <= eps/4.
    HalvingPlusQuarterEps { epsilon: f64 },
}

impl Envelope {
    fn bound(&self, g0: f64, s: u32) -> f64 {
        match self {
            Envelope::Geometric(f) => f.envelope(g0, s),
            Envelope::HalvingPlusQuarterEps { epsilon } => {
                0.5f64.powi(s as i32) * g0 + epsilon / 4.0
            }
        }
    }

    fn describe(&self, g0: f64) -> String {
        match self {
            Envelope::Geometric(f) => format!(
                "geometric stage envelope alpha^s g0 + delta sum(alpha^k) with alpha = {}, \
                 delta = {}, g0 = {g0}",
                f.alpha, f.delta
            ),
            Envelope::HalvingPlusQuarterEps { epsilon } => {
                format!("halving stage envelope g0/2^s + eps/4 with eps = {epsilon}, g0 = {g0}")
            }
        }
    }
}

/// Runs the multi-stage recursive solver with the given stage parameters and
/// checks the ensemble mean of ||grad F(w~_s)||^2 at every stage
/// s = 0..=stages against the envelope. The s = 0 row is the deterministic
/// start measurement.
#[allow(clippy::too_many_arguments)]
pub fn contraction_check<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    eta: f64,
    m: usize,
    b: usize,
    stages: usize,
    envelope: Envelope,
    replications: usize,
    seed_base: u64,
    margin_sigmas: f64,
) -> Result<Vec<BoundCheck>, DiagnosticsError> {
    require_reps(replications)?;
    if let Envelope::Geometric(f) = envelope {
        if f.alpha >= 1.0 || f.alpha.is_nan() {
            return Err(DiagnosticsError::InvalidArgument(format!(
                "stage factor alpha = {} does not contract; the schedule gives no envelope",
                f.alpha
            )));
        }
    }

    let g0 = output_grad_norm_sq(oracle, w0, &mut held_out_rng(seed_base))?;
    let mut per_stage: Vec<Vec<f64>> = vec![Vec::with_capacity(replications); stages];
    for rep in 0..replications {
        let seed = seed_base.wrapping_add(rep as u64);
        let mut streams = RngStreams::from_seed(seed);
        let mut held = held_out_rng(seed);
        let mut w = w0.clone();
        for stage_samples in per_stage.iter_mut() {
            let (next, _) = variance_reduced_outer(
                oracle,
                &w,
                EstimatorKind::Recursive,
                V0Mode::Minibatch(b),
                eta,
                m,
                1,
                &mut streams,
                &TraceOptions::none(),
            )?;
            w = next;
            stage_samples.push(output_grad_norm_sq(oracle, &w, &mut held)?);
        }
    }

    let provenance = envelope.describe(g0);
    let mut checks = Vec::with_capacity(stages + 1);
    // Stage 0 is the start point itself: no randomness has acted, so the
    // ensemble is the constant g0.
    checks.push(BoundCheck::evaluate(
        "stage 0 start gradient".to_string(),
        MonteCarloEstimate::exact(g0, replications, seed_base),
        envelope.bound(g0, 0),
        margin_sigmas,
        provenance.clone(),
    ));
    for (s, samples) in per_stage.iter().enumerate() {
        checks.push(BoundCheck::evaluate(
            format!("stage {} output gradient", s + 1),
            MonteCarloEstimate::from_samples(samples, seed_base),
            envelope.bound(g0, (s + 1) as u32),
            margin_sigmas,
            provenance.clone(),
        ));
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// Complexity slope
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct SlopePoint {
    pub epsilon: f64,
    /// Gradient evaluations one run consumed (deterministic per schedule).
    pub work: u64,
    pub achieved: MonteCarloEstimate,
    pub schedule: Schedule,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    /// Least-squares slope of ln(work) against ln(1/epsilon).
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<SlopePoint>,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Measures how total work scales with the target accuracy: for each epsilon
/// the regime's rule derives a schedule, the scheduled solver runs a seeded
/// ensemble, and the run counts as converged when the ensemble mean of
/// ||grad F||^2 reaches epsilon within the sigma margin. A missed target
/// retries with the target halved until the scheduled work would exceed 100x
/// the original budget. Returns the least-squares slope of ln(work) versus
/// ln(1/epsilon). Needs at least 3 epsilons spanning at least 2 decades.
#[allow(clippy::too_many_arguments)]
pub fn complexity_slope<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    regime: Regime,
    epsilons: &[f64],
    replications: usize,
    seed_base: u64,
    margin_sigmas: f64,
) -> Result<SlopeFit, DiagnosticsError> {
    require_reps(replications)?;
    if epsilons.len() < 3 {
        return Err(DiagnosticsError::InvalidArgument(
            "the slope fit needs at least 3 target accuracies".into(),
        ));
    }
    if epsilons.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
        return Err(DiagnosticsError::InvalidArgument(
            "target accuracies must be positive and finite".into(),
        ));
    }
    let lo = epsilons.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = epsilons.iter().cloned().fold(0.0, f64::max);
    if hi / lo < 99.99 {
        return Err(DiagnosticsError::InvalidArgument(
            "the slope fit needs targets spanning at least 2 decades".into(),
        ));
    }

    let c = oracle.constants();
    // Measured start-point scalars the rules need, taken once.
    enum Rule {
        Convex { delta_f: f64 },
        StronglyConvex { g0: f64 },
        Growth { g0: f64 },
    }
    let rule = match regime {
        Regime::OneLoopConvex => {
            let f_star = c.f_star.ok_or(ScheduleError::MissingConstant {
                name: "f_star",
                rule: "one-loop convex",
            })?;
            Rule::Convex { delta_f: oracle.value_full(w0)? - f_star }
        }
        Regime::MultiLoopStronglyConvex => Rule::StronglyConvex {
            g0: output_grad_norm_sq(oracle, w0, &mut held_out_rng(seed_base))?,
        },
        Regime::MultiLoopGrowthBound => Rule::Growth {
            g0: output_grad_norm_sq(oracle, w0, &mut held_out_rng(seed_base))?,
        },
        Regime::OneLoopNonConvex => {
            return Err(DiagnosticsError::InvalidArgument(
                "the non-convex rule is parameterized by m, not by a target accuracy".into(),
            ));
        }
    };
    let schedule_for = |eps: f64| -> Result<Schedule, ScheduleError> {
        match &rule {
            Rule::Convex { delta_f } => schedules::one_loop_convex_for_epsilon(c, eps, *delta_f),
            Rule::StronglyConvex { g0 } => schedules::multi_loop_strongly_convex(c, eps, *g0),
            Rule::Growth { g0 } => schedules::multi_loop_growth_bound(c, eps, *g0),
        }
    };

    let mut points = Vec::with_capacity(epsilons.len());
    for (k, &eps) in epsilons.iter().enumerate() {
        let budget = schedule_for(eps)?.total_cost().saturating_mul(100);
        let point_seed = seed_base.wrapping_add(1).wrapping_mul(1 + k as u64 * 65_537);
        let mut eps_eff = eps;
        loop {
            let schedule = schedule_for(eps_eff)?;
            let (samples, work) = grad_norm_ensemble(
                oracle,
                w0,
                EstimatorKind::Recursive,
                V0Mode::Minibatch(schedule.b),
                schedule.eta,
                schedule.m,
                schedule.outer_loops,
                replications,
                point_seed,
            )?;
            let achieved = MonteCarloEstimate::from_samples(&samples, point_seed);
            if achieved.mean <= eps + margin_sigmas * achieved.std_error {
                points.push(SlopePoint { epsilon: eps, work, achieved, schedule });
                break;
            }
            let next = eps_eff / 2.0;
            if schedule_for(next)?.total_cost() > budget {
                return Err(DiagnosticsError::NoConvergence {
                    target: eps,
                    achieved: achieved.mean,
                    work,
                    budget,
                });
            }
            eps_eff = next;
        }
    }

    let xs: Vec<f64> = points.iter().map(|p| (1.0 / p.epsilon).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.work as f64).ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(SlopeFit { slope, intercept, points })
}

// ---------------------------------------------------------------------------
// Gradient correctness
// ---------------------------------------------------------------------------

/// Central-difference audit of per-sample gradients: at `num_points` random
/// (point, sample) pairs, compares grad f(w; xi) with finite differences of
/// f(.; xi) using step 1e-6 (1 + |w_j|) per coordinate. Returns the worst
/// relative error, with the norm floored at 1 so flat objectives compare
/// absolutely.
pub fn grad_fd_check<O: StochasticOracle + ?Sized>(
    oracle: &O,
    num_points: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let d = oracle.dim();
    let mut worst = 0.0f64;
    for _ in 0..num_points {
        let coords: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = WeightVector::new(coords.clone());
        let xi = oracle.sample(&mut rng);
        let g = oracle.grad_sample(&w, xi);
        let mut err_sq = 0.0f64;
        let mut probe = coords;
        for j in 0..d {
            let h = 1e-6 * (1.0 + probe[j].abs());
            let orig = probe[j];
            probe[j] = orig + h;
            let up = oracle.value_sample(&WeightVector::new(probe.clone()), xi);
            probe[j] = orig - h;
            let down = oracle.value_sample(&WeightVector::new(probe.clone()), xi);
            probe[j] = orig;
            let fd = (up - down) / (2.0 * h);
            err_sq += (fd - g[j]) * (fd - g[j]);
        }
        worst = worst.max(err_sq.sqrt() / g.norm().max(1.0));
    }
    worst
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

pub mod fixtures {
    //! Small synthetic objectives for the verification suites: shapes the
    //! first-class problems do not cover.

    use crate::oracle::{uniform_component, ProblemConstants, SampleId, StochasticOracle};
    use crate::vector::WeightVector;
    use rand_chacha::ChaCha8Rng;

    /// 1-D non-convex finite sum with components f(w; i) = sigmoid(a_i w + b_i)^2.
    /// Smooth, bounded in (0, 1), non-convex (each component has an
    /// inflection), with no minimizer in general: 0 is a valid lower bound.
    pub struct SigmoidMixture {
        coeffs: Vec<(f64, f64)>,
        constants: ProblemConstants,
    }

    impl SigmoidMixture {
        /// max over s in (0,1) of |2 s^2 (1-s)(2-3s)|, rounded up at the 4th
        /// digit: the second derivative of sigmoid(u)^2 is this expression at
        /// s = sigmoid(u), so CAP * a^2 certifies per-component smoothness.
        /// The exact maximum 0.15406... sits at s = (15 - sqrt(33))/24.
        const CURVATURE_CAP: f64 = 0.1541;

        pub fn new(coeffs: Vec<(f64, f64)>) -> Self {
            assert!(!coeffs.is_empty(), "need at least one component");
            assert!(
                coeffs.iter().all(|&(a, b)| a.is_finite() && b.is_finite()),
                "coefficients must be finite"
            );
            let l = coeffs
                .iter()
                .map(|&(a, _)| Self::CURVATURE_CAP * a * a)
                .fold(0.0f64, f64::max);
            assert!(l > 0.0, "at least one component must depend on w");
            let mut constants = ProblemConstants::new(l);
            constants.n_components = Some(coeffs.len());
            constants.f_star = Some(0.0);
            SigmoidMixture { coeffs, constants }
        }

        /// Five components with mixed slopes and offsets.
        pub fn standard() -> Self {
            Self::new(vec![(1.0, 0.0), (1.5, -0.8), (0.7, 1.3), (2.0, 0.4), (1.2, -1.6)])
        }

        /// The single-component toy sigmoid(w)^2.
        pub fn single() -> Self {
            Self::new(vec![(1.0, 0.0)])
        }

        fn sigma(u: f64) -> f64 {
            if u >= 0.0 {
                1.0 / (1.0 + (-u).exp())
            } else {
                let e = u.exp();
                e / (1.0 + e)
            }
        }

        /// Analytic second derivative of one component; the smoothness
        /// certificate tests evaluate this on a grid against the stored L.
        pub fn component_second_derivative(&self, w: f64, i: usize) -> f64 {
            let (a, b) = self.coeffs[i];
            let s = Self::sigma(a * w + b);
            2.0 * s * s * (1.0 - s) * (2.0 - 3.0 * s) * a * a
        }
    }

    impl StochasticOracle for SigmoidMixture {
        fn dim(&self) -> usize {
            1
        }

        fn constants(&self) -> &ProblemConstants {
            &self.constants
        }

        fn sample(&self, rng: &mut ChaCha8Rng) -> SampleId {
            uniform_component(self.coeffs.len(), rng)
        }

        fn value_sample(&self, w: &WeightVector, xi: SampleId) -> f64 {
            let (a, b) = self.coeffs[xi.index()];
            let s = Self::sigma(a * w[0] + b);
            s * s
        }

        fn grad_sample(&self, w: &WeightVector, xi: SampleId) -> WeightVector {
            let (a, b) = self.coeffs[xi.index()];
            let s = Self::sigma(a * w[0] + b);
            WeightVector::new(vec![2.0 * s * s * (1.0 - s) * a])
        }
    }
}
