//! Stochastic solvers: recursive and anchored variance-reduced inner loops,
//! their multi-stage outer drivers, and plain SGD.
//!
//! One inner loop runs as follows. An initial direction v_0 estimates the full
//! gradient at the start point w_0, either exactly (finite sums only) or as a
//! mini-batch mean of fresh i.i.d. samples. The first update is
//! w_1 = w_0 - eta v_0. Each later step t = 1, ..., m-1 draws one sample xi_t
//! and forms the next direction from two gradient evaluations:
//!
//! * recursive (SARAH-style): v_t = grad f(w_t; xi_t) - grad f(w_{t-1}; xi_t) + v_{t-1}
//! * anchored  (SVRG-style):  v_t = grad f(w_t; xi_t) - grad f(w_0; xi_t) + v_0
//!
//! followed by w_{t+1} = w_t - eta v_t. The returned point is w_t~ for an
//! index t~ drawn uniformly from {0, ..., m} on its own random stream before
//! the loop starts, so the choice never perturbs the sampling streams.
//!
//! Work is counted in per-sample gradient evaluations: the initial direction
//! costs its batch size (or n for the exact variant) and every inner step
//! costs 2, for a total of b + 2(m-1) per stage. Diagnostic quantities logged
//! into the trace are free.

use crate::oracle::{OracleError, RngStreams, SampleId, StochasticOracle};
use crate::vector::WeightVector;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

/// Which correction the inner loop applies on top of the two fresh gradient
/// evaluations of step t.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EstimatorKind {
    /// Correction relative to the previous iterate and previous direction.
    Recursive,
    /// Correction relative to the fixed stage anchor w_0 and v_0.
    Anchored,
}

/// How the initial direction v_0 of a stage is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum V0Mode {
    /// Mean gradient over a fresh mini-batch of this size.
    Minibatch(usize),
    /// Exact full gradient (finite sums only).
    ExactFullGradient,
}

/// Per-step trace controls. `thin` keeps every thin-th step plus the first and
/// the last; 1 keeps everything.
#[derive(Clone, Debug)]
pub struct TraceOptions {
    pub record_steps: bool,
    pub thin: usize,
    /// Log ||grad F(w_t)||^2 on recorded steps (finite sums only; silently
    /// absent otherwise).
    pub record_full_grad: bool,
    /// Log F(w_t) on recorded steps (finite sums only).
    pub record_value: bool,
    /// Attach full iterate/direction snapshots to recorded steps. Expensive;
    /// meant for invariant checks, not production runs.
    pub record_states: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            record_steps: true,
            thin: 1,
            record_full_grad: false,
            record_value: false,
            record_states: false,
        }
    }
}

impl TraceOptions {
    /// No per-step records at all (outer records are always kept).
    pub fn none() -> Self {
        TraceOptions { record_steps: false, ..Default::default() }
    }

    fn keeps(&self, t: usize, m: usize) -> bool {
        if !self.record_steps {
            return false;
        }
        let thin = self.thin.max(1);
        t == 0 || t + 1 == m || t.is_multiple_of(thin)
    }
}

/// Full state of one inner step: enough to replay the update formulas
/// exactly. Attached to step records when `record_states` is on; at t = 0
/// current and previous entries coincide and there is no sample.
#[derive(Clone, Debug, Serialize)]
pub struct InnerLoopState {
    pub w_prev: WeightVector,
    pub w_curr: WeightVector,
    pub v_prev: WeightVector,
    pub v_curr: WeightVector,
    pub xi: Option<SampleId>,
}

/// One recorded inner step. `grad_evals` is the cumulative evaluation count
/// the moment v_t was formed.
#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub stage: usize,
    pub t: usize,
    pub v_norm_sq: f64,
    pub grad_norm_sq: Option<f64>,
    pub value: Option<f64>,
    pub grad_evals: u64,
    #[serde(skip)]
    pub state: Option<Box<InnerLoopState>>,
}

/// Per-stage summary: which iterate index was returned and, when requested
/// and computable, full-objective diagnostics at the returned point.
#[derive(Clone, Debug, Serialize)]
pub struct OuterRecord {
    pub stage: usize,
    pub chosen_index: usize,
    pub grad_norm_sq: Option<f64>,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunTrace {
    pub steps: Vec<StepRecord>,
    pub outer: Vec<OuterRecord>,
    /// Total per-sample gradient evaluations consumed by the algorithm.
    pub grad_evals: u64,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("iterate diverged (non-finite) at stage {stage}, inner step {step}")]
    Diverged { stage: usize, step: usize, trace: Box<RunTrace> },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Outcome of the internal loop before the public wrappers attach the trace.
enum LoopFailure {
    Diverged { stage: usize, step: usize },
    Oracle(OracleError),
}

/// w - eta v, elementwise. Kept as the single place the iterate update is
/// written so traces replay bit-for-bit.
fn take_step(w: &WeightVector, eta: f64, v: &WeightVector) -> WeightVector {
    WeightVector::new(
        w.iter().zip(v.iter()).map(|(&wj, &vj)| wj - eta * vj).collect(),
    )
}

/// (g_new - g_old) + base, elementwise, the shared shape of both corrections.
fn correct(g_new: &WeightVector, g_old: &WeightVector, base: &WeightVector) -> WeightVector {
    WeightVector::new(
        g_new
            .iter()
            .zip(g_old.iter())
            .zip(base.iter())
            .map(|((&a, &b), &c)| (a - b) + c)
            .collect(),
    )
}

fn validate_common(
    oracle: &(impl StochasticOracle + ?Sized),
    w0: &WeightVector,
    eta: f64,
    m: usize,
) -> Result<(), SolverError> {
    if w0.dim() != oracle.dim() {
        return Err(SolverError::InvalidArgument(format!(
            "start point has dimension {} but the problem has {}",
            w0.dim(),
            oracle.dim()
        )));
    }
    if !w0.is_finite() {
        return Err(SolverError::InvalidArgument("start point has non-finite coordinates".into()));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(SolverError::InvalidArgument(format!(
            "step size must be positive and finite, got {eta}"
        )));
    }
    if m == 0 {
        return Err(SolverError::InvalidArgument("inner loop length m must be at least 1".into()));
    }
    Ok(())
}

fn finite_sum_diag<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w: &WeightVector,
    opts: &TraceOptions,
) -> (Option<f64>, Option<f64>) {
    let g = if opts.record_full_grad { oracle.grad_full(w).ok().map(|g| g.norm_sq()) } else { None };
    let v = if opts.record_value { oracle.value_full(w).ok() } else { None };
    (g, v)
}

/// One inner stage. Pushes step and outer records onto `trace` and returns the
/// chosen iterate.
#[allow(clippy::too_many_arguments)]
fn inner_stage<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    eta: f64,
    m: usize,
    v0_mode: V0Mode,
    estimator: EstimatorKind,
    streams: &mut RngStreams,
    opts: &TraceOptions,
    stage: usize,
    trace: &mut RunTrace,
) -> Result<WeightVector, LoopFailure> {
    // The returned index is drawn up front on its own stream; the iterate is
    // snapshotted when the loop passes it.
    let chosen: usize = streams.output_select().random_range(0..=m);

    let v0 = match v0_mode {
        V0Mode::Minibatch(b) => {
            let g = oracle.grad_minibatch(w0, b, streams.outer_batch()).map_err(LoopFailure::Oracle)?;
            trace.grad_evals += b as u64;
            g
        }
        V0Mode::ExactFullGradient => {
            let g = oracle.grad_full(w0).map_err(LoopFailure::Oracle)?;
            trace.grad_evals += oracle.n_components().expect("grad_full succeeded") as u64;
            g
        }
    };

    let mut chosen_w = if chosen == 0 { Some(w0.clone()) } else { None };

    if opts.keeps(0, m) {
        let (grad_norm_sq, value) = finite_sum_diag(oracle, w0, opts);
        trace.steps.push(StepRecord {
            stage,
            t: 0,
            v_norm_sq: v0.norm_sq(),
            grad_norm_sq,
            value,
            grad_evals: trace.grad_evals,
            state: opts.record_states.then(|| {
                Box::new(InnerLoopState {
                    w_prev: w0.clone(),
                    w_curr: w0.clone(),
                    v_prev: v0.clone(),
                    v_curr: v0.clone(),
                    xi: None,
                })
            }),
        });
    }

    let mut w_prev = w0.clone();
    let mut w_curr = take_step(w0, eta, &v0);
    if !w_curr.is_finite() {
        return Err(LoopFailure::Diverged { stage, step: 0 });
    }

    let anchor_w = w0;
    let anchor_v = v0.clone();
    let mut v_prev = v0;

    for t in 1..m {
        if chosen == t {
            chosen_w = Some(w_curr.clone());
        }

        let xi = oracle.sample(streams.inner());
        let g_new = oracle.grad_sample(&w_curr, xi);
        let v_curr = match estimator {
            EstimatorKind::Recursive => {
                let g_old = oracle.grad_sample(&w_prev, xi);
                correct(&g_new, &g_old, &v_prev)
            }
            EstimatorKind::Anchored => {
                let g_old = oracle.grad_sample(anchor_w, xi);
                correct(&g_new, &g_old, &anchor_v)
            }
        };
        trace.grad_evals += 2;

        if opts.keeps(t, m) {
            let (grad_norm_sq, value) = finite_sum_diag(oracle, &w_curr, opts);
            trace.steps.push(StepRecord {
                stage,
                t,
                v_norm_sq: v_curr.norm_sq(),
                grad_norm_sq,
                value,
                grad_evals: trace.grad_evals,
                state: opts.record_states.then(|| {
                    Box::new(InnerLoopState {
                        w_prev: w_prev.clone(),
                        w_curr: w_curr.clone(),
                        v_prev: v_prev.clone(),
                        v_curr: v_curr.clone(),
                        xi: Some(xi),
                    })
                }),
            });
        }

        let w_next = take_step(&w_curr, eta, &v_curr);
        if !w_next.is_finite() {
            return Err(LoopFailure::Diverged { stage, step: t });
        }
        w_prev = w_curr;
        w_curr = w_next;
        v_prev = v_curr;
    }

    if chosen == m {
        chosen_w = Some(w_curr);
    }
    let w_out = chosen_w.expect("chosen index lies in 0..=m");

    let (grad_norm_sq, value) = finite_sum_diag(oracle, &w_out, opts);
    trace.outer.push(OuterRecord { stage, chosen_index: chosen, grad_norm_sq, value });

    Ok(w_out)
}

#[allow(clippy::too_many_arguments)]
fn run_stages<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    eta: f64,
    m: usize,
    v0_mode: V0Mode,
    estimator: EstimatorKind,
    outer_loops: usize,
    streams: &mut RngStreams,
    opts: &TraceOptions,
) -> Result<(WeightVector, RunTrace), SolverError> {
    validate_common(oracle, w0, eta, m)?;
    if let V0Mode::Minibatch(0) = v0_mode {
        return Err(SolverError::InvalidArgument("mini-batch size must be at least 1".into()));
    }
    if outer_loops == 0 {
        return Err(SolverError::InvalidArgument("need at least one outer stage".into()));
    }

    let mut trace = RunTrace::default();
    let mut w = w0.clone();
    for stage in 1..=outer_loops {
        match inner_stage(oracle, &w, eta, m, v0_mode, estimator, streams, opts, stage, &mut trace)
        {
            Ok(next) => w = next,
            Err(LoopFailure::Diverged { stage, step }) => {
                return Err(SolverError::Diverged { stage, step, trace: Box::new(trace) })
            }
            Err(LoopFailure::Oracle(e)) => return Err(SolverError::Oracle(e)),
        }
    }
    Ok((w, trace))
}

/// One variance-reduced stage with a recursive correction and a mini-batch
/// initial direction.
pub fn isarah_inner<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    eta: f64,
    m: usize,
    batch: usize,
    streams: &mut RngStreams,
    opts: &TraceOptions,
) -> Result<(WeightVector, RunTrace), SolverError> {
    run_stages(oracle, w0, eta, m, V0Mode::Minibatch(batch), EstimatorKind::Recursive, 1, streams, opts)
}

/// Chains `outer_loops` recursive stages, each restarted at the point the
/// previous stage returned.
#[allow(clippy::too_many_arguments)]
pub fn isarah_outer<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    eta: f64,
    m: usize,
    batch: usize,
    outer_loops: usize,
    streams: &mut RngStreams,
    opts: &TraceOptions,
) -> Result<(WeightVector, RunTrace), SolverError> {
    run_stages(
        oracle,
        w0,
        eta,
        m,
        V0Mode::Minibatch(batch),
        EstimatorKind::Recursive,
        outer_loops,
        streams,
        opts,
    )
}

/// Recursive stage with an exact initial direction (finite sums only).
pub fn sarah_exact_inner<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    eta: f64,
    m: usize,
    streams: &mut RngStreams,
    opts: &TraceOptions,
) -> Result<(WeightVector, RunTrace), SolverError> {
    run_stages(oracle, w0, eta, m, V0Mode::ExactFullGradient, EstimatorKind::Recursive, 1, streams, opts)
}

/// Anchored stage with a mini-batch initial direction.
pub fn svrg_inner<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    eta: f64,
    m: usize,
    batch: usize,
    streams: &mut RngStreams,
    opts: &TraceOptions,
) -> Result<(WeightVector, RunTrace), SolverError> {
    run_stages(oracle, w0, eta, m, V0Mode::Minibatch(batch), EstimatorKind::Anchored, 1, streams, opts)
}

/// Anchored stage with an exact initial direction (the classical setup whose
/// step directions are conditionally unbiased).
pub fn svrg_exact_inner<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    eta: f64,
    m: usize,
    streams: &mut RngStreams,
    opts: &TraceOptions,
) -> Result<(WeightVector, RunTrace), SolverError> {
    run_stages(oracle, w0, eta, m, V0Mode::ExactFullGradient, EstimatorKind::Anchored, 1, streams, opts)
}

/// Generic multi-stage driver for any estimator/initial-direction pairing.
#[allow(clippy::too_many_arguments)]
pub fn variance_reduced_outer<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    estimator: EstimatorKind,
    v0_mode: V0Mode,
    eta: f64,
    m: usize,
    outer_loops: usize,
    streams: &mut RngStreams,
    opts: &TraceOptions,
) -> Result<(WeightVector, RunTrace), SolverError> {
    run_stages(oracle, w0, eta, m, v0_mode, estimator, outer_loops, streams, opts)
}

/// Plain mini-batch SGD: w_{k+1} = w_k - eta(k) g_k with g_k a fresh
/// mini-batch mean gradient, drawn from the inner-sample stream. Costs `batch`
/// evaluations per step; the output is the final iterate.
pub fn sgd<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w0: &WeightVector,
    eta_schedule: impl Fn(usize) -> f64,
    num_steps: usize,
    batch: usize,
    streams: &mut RngStreams,
    opts: &TraceOptions,
) -> Result<(WeightVector, RunTrace), SolverError> {
    if w0.dim() != oracle.dim() {
        return Err(SolverError::InvalidArgument(format!(
            "start point has dimension {} but the problem has {}",
            w0.dim(),
            oracle.dim()
        )));
    }
    if !w0.is_finite() {
        return Err(SolverError::InvalidArgument("start point has non-finite coordinates".into()));
    }
    if num_steps == 0 {
        return Err(SolverError::InvalidArgument("need at least one step".into()));
    }
    if batch == 0 {
        return Err(SolverError::InvalidArgument("mini-batch size must be at least 1".into()));
    }

    let mut trace = RunTrace::default();
    let mut w = w0.clone();
    for k in 0..num_steps {
        let eta = eta_schedule(k);
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(SolverError::InvalidArgument(format!(
                "step-size schedule returned {eta} at step {k}"
            )));
        }
        let g = oracle.grad_minibatch(&w, batch, streams.inner())?;
        trace.grad_evals += batch as u64;

        if opts.keeps(k, num_steps) {
            let (grad_norm_sq, value) = finite_sum_diag(oracle, &w, opts);
            trace.steps.push(StepRecord {
                stage: 1,
                t: k,
                v_norm_sq: g.norm_sq(),
                grad_norm_sq,
                value,
                grad_evals: trace.grad_evals,
                state: None,
            });
        }

        let w_next = take_step(&w, eta, &g);
        if !w_next.is_finite() {
            return Err(SolverError::Diverged { stage: 1, step: k, trace: Box::new(trace) });
        }
        w = w_next;
    }
    Ok((w, trace))
}
