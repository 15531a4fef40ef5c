//! Experiment driver: resolves a config into a concrete run plan, fans the
//! replication ensemble across worker threads, writes traces and the summary,
//! and evaluates the enabled checks.
//!
//! Replication k always runs with master seed `seed_base + k`, so results are
//! independent of worker count and of scheduling order; file writes happen
//! on the main thread after all workers join.

use std::path::Path;
use std::time::Instant;

use isarah::diagnostics::{
    self, BoundCheck, MonteCarloEstimate, ENUMERATION_LIMIT,
};
use isarah::oracle::{RngStreams, StochasticOracle};
use isarah::schedules::{self, Regime};
use isarah::solvers::{self, EstimatorKind, RunTrace, TraceOptions, V0Mode};
use isarah::vector::WeightVector;

use crate::config::{
    self, ChecksSpec, ExperimentConfig, OutputSpec, ResolvedSchedule, SolverName,
};
use crate::output::{
    self, Aggregates, RunResult, RunSummary, ScheduleSummary, StageSummary, Summary,
    SUMMARY_SCHEMA_VERSION,
};
use crate::CliError;

/// Environment variable naming the default worker count for `run`.
pub const WORKERS_ENV: &str = "ISARAH_WORKERS";

/// Steps between kept trace rows: 1 up to 10^4 steps per stage, then the
/// smallest thinning that keeps at most ~10^4 rows (first and last step of a
/// stage are always kept).
pub fn thin_for(m: usize) -> usize {
    m.div_ceil(10_000).max(1)
}

pub fn resolve_workers(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|s| s.parse().ok()))
        .unwrap_or(1)
        .max(1)
}

/// Runs the whole experiment a config describes. `Ok` means the run finished
/// and every enabled check passed.
pub fn run_experiment(config_path: &Path, workers_flag: Option<usize>) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = config::load_config(config_path)?;
    let (oracle, problem_desc) = config::build_problem(&cfg.problem)?;
    let oracle: &dyn StochasticOracle = oracle.as_ref();
    let w0 = config::resolve_start(&cfg.start, oracle)?;
    let schedule = config::resolve_schedule(&cfg.schedule, oracle, &w0, cfg.seed_base)?;
    let workers = resolve_workers(workers_flag);

    let opts = trace_options(&cfg.output, schedule.m);
    let thin = opts.thin;

    println!(
        "running {} on {problem_desc}: eta = {}, m = {}, b = {}, outer_loops = {}, \
         {} replications, {workers} worker{}",
        cfg.solver,
        schedule.eta,
        schedule.m,
        schedule.b,
        schedule.outer_loops,
        cfg.replications,
        if workers == 1 { "" } else { "s" }
    );

    let runs = run_ensemble(oracle, &w0, &cfg, &schedule, &opts, workers)?;

    std::fs::create_dir_all(&cfg.output.directory).map_err(|e| {
        CliError::Io(format!("cannot create {}: {e}", cfg.output.directory.display()))
    })?;
    if cfg.output.trace {
        for run in &runs {
            output::write_trace(&cfg.output.directory, cfg.solver, run)?;
        }
    }

    let checks = run_checks(
        oracle,
        &w0,
        &cfg.checks,
        &schedule,
        cfg.solver,
        cfg.seed_base,
        cfg.replications,
    )?;
    for check in &checks {
        println!("{check}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let all_passed = failed == 0;

    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        solver: cfg.solver.to_string(),
        problem: problem_desc,
        replications: cfg.replications,
        seed_base: cfg.seed_base,
        workers,
        thin,
        schedule: schedule_summary(&schedule),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        runs: runs.iter().map(run_summary).collect(),
        aggregates: aggregates(&runs, cfg.seed_base),
        checks,
        all_checks_passed: all_passed,
    };
    let summary_path = output::write_summary(&cfg.output.directory, &summary)?;
    println!(
        "wrote {} run summar{} and {} to {}",
        runs.len(),
        if runs.len() == 1 { "y" } else { "ies" },
        summary_path.file_name().unwrap_or_default().to_string_lossy(),
        cfg.output.directory.display()
    );

    if all_passed {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}

fn schedule_summary(s: &ResolvedSchedule) -> ScheduleSummary {
    let per_stage = (s.b as u64).saturating_add(2u64.saturating_mul(s.m as u64 - 1));
    ScheduleSummary {
        eta: s.eta,
        m: s.m,
        b: s.b,
        outer_loops: s.outer_loops,
        cost_per_stage: per_stage,
        total_cost: per_stage.saturating_mul(s.outer_loops as u64),
        regime: s.regime.map(|r| r.to_string()),
        epsilon: s.epsilon,
        provenance: s.provenance.clone(),
    }
}

fn run_summary(run: &RunResult) -> RunSummary {
    let stages = run
        .trace
        .outer
        .iter()
        .map(|o| StageSummary {
            stage: o.stage,
            chosen_index: o.chosen_index,
            grad_norm_sq: o.grad_norm_sq,
            value: o.value,
        })
        .collect();
    RunSummary { run: run.run, seed: run.seed, grad_evals: run.trace.grad_evals, stages }
}

fn aggregates(runs: &[RunResult], seed_base: u64) -> Aggregates {
    // Stage-output metrics come from the last stage record; SGD has no stage
    // structure, so its final step record stands in.
    let last_grad = |r: &RunResult| {
        r.trace
            .outer
            .last()
            .and_then(|o| o.grad_norm_sq)
            .or_else(|| r.trace.steps.last().and_then(|s| s.grad_norm_sq))
    };
    let last_value = |r: &RunResult| {
        r.trace
            .outer
            .last()
            .and_then(|o| o.value)
            .or_else(|| r.trace.steps.last().and_then(|s| s.value))
    };
    Aggregates {
        final_v_norm_sq: output::aggregate(runs, seed_base, |r| {
            r.trace.steps.last().map(|s| s.v_norm_sq)
        }),
        final_grad_norm_sq: output::aggregate(runs, seed_base, last_grad),
        final_value: output::aggregate(runs, seed_base, last_value),
    }
}

/// One replication: master seed `seed_base + rep`, streams derived from it.
fn run_one(
    oracle: &dyn StochasticOracle,
    w0: &WeightVector,
    solver: SolverName,
    schedule: &ResolvedSchedule,
    opts: &TraceOptions,
    rep: usize,
    seed_base: u64,
) -> Result<RunResult, CliError> {
    let seed = seed_base.wrapping_add(rep as u64);
    let mut streams = RngStreams::from_seed(seed);
    let trace: RunTrace = match solver {
        SolverName::Isarah => solvers::variance_reduced_outer(
            oracle,
            w0,
            EstimatorKind::Recursive,
            V0Mode::Minibatch(schedule.b),
            schedule.eta,
            schedule.m,
            schedule.outer_loops,
            &mut streams,
            opts,
        )
        .map(|(_, t)| t)?,
        SolverName::Sarah => solvers::variance_reduced_outer(
            oracle,
            w0,
            EstimatorKind::Recursive,
            V0Mode::ExactFullGradient,
            schedule.eta,
            schedule.m,
            schedule.outer_loops,
            &mut streams,
            opts,
        )
        .map(|(_, t)| t)?,
        SolverName::Svrg => solvers::variance_reduced_outer(
            oracle,
            w0,
            EstimatorKind::Anchored,
            V0Mode::ExactFullGradient,
            schedule.eta,
            schedule.m,
            schedule.outer_loops,
            &mut streams,
            opts,
        )
        .map(|(_, t)| t)?,
        SolverName::Sgd => {
            let steps = schedule.m.saturating_mul(schedule.outer_loops);
            solvers::sgd(oracle, w0, |_| schedule.eta, steps, schedule.b, &mut streams, opts)
                .map(|(_, t)| t)?
        }
    };
    Ok(RunResult { run: rep, seed, trace })
}

/// Runs all replications, striped over `workers` threads, and returns them in
/// replication order. The first error (lowest replication index) wins, so the
/// outcome does not depend on thread timing.
pub fn run_ensemble(
    oracle: &dyn StochasticOracle,
    w0: &WeightVector,
    cfg: &ExperimentConfig,
    schedule: &ResolvedSchedule,
    opts: &TraceOptions,
    workers: usize,
) -> Result<Vec<RunResult>, CliError> {
    let reps = cfg.replications;
    if workers <= 1 || reps <= 1 {
        return (0..reps)
            .map(|rep| run_one(oracle, w0, cfg.solver, schedule, opts, rep, cfg.seed_base))
            .collect();
    }

    let workers = workers.min(reps);
    let mut outcomes: Vec<Result<Vec<RunResult>, (usize, CliError)>> =
        Vec::with_capacity(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|worker| {
                scope.spawn(move || {
                    let mut mine = Vec::new();
                    for rep in (worker..reps).step_by(workers) {
                        match run_one(oracle, w0, cfg.solver, schedule, opts, rep, cfg.seed_base)
                        {
                            Ok(r) => mine.push(r),
                            Err(e) => return Err((rep, e)),
                        }
                    }
                    Ok(mine)
                })
            })
            .collect();
        for handle in handles {
            outcomes.push(handle.join().expect("worker thread panicked"));
        }
    });

    let mut runs = Vec::with_capacity(reps);
    let mut first_error: Option<(usize, CliError)> = None;
    for outcome in outcomes {
        match outcome {
            Ok(mine) => runs.extend(mine),
            Err((rep, e)) => {
                if first_error.as_ref().is_none_or(|(r, _)| rep < *r) {
                    first_error = Some((rep, e));
                }
            }
        }
    }
    if let Some((_, e)) = first_error {
        return Err(e);
    }
    runs.sort_by_key(|r| r.run);
    Ok(runs)
}

/// The initial-direction form the checks should mirror for this solver.
fn check_v0_mode(solver: SolverName, b: usize) -> V0Mode {
    match solver {
        SolverName::Isarah | SolverName::Sgd => V0Mode::Minibatch(b),
        SolverName::Sarah | SolverName::Svrg => V0Mode::ExactFullGradient,
    }
}

/// Largest batch whose tuple enumeration n^b stays within the limit.
fn identity_batch_cap(n: usize, b: usize) -> usize {
    if n <= 1 {
        return b.max(1);
    }
    let mut capped = 1usize;
    let mut tuples: u128 = n as u128;
    while capped < b && tuples.saturating_mul(n as u128) <= ENUMERATION_LIMIT {
        tuples = tuples.saturating_mul(n as u128);
        capped += 1;
    }
    capped
}

fn identity_check(
    oracle: &dyn StochasticOracle,
    w0: &WeightVector,
    b: usize,
) -> Result<BoundCheck, CliError> {
    let n = oracle.n_components().ok_or_else(|| {
        CliError::Config(
            "the variance identity check enumerates components, which needs a finite sum".into(),
        )
    })?;
    let b_eff = identity_batch_cap(n, b);
    let id = diagnostics::minibatch_variance_identity(oracle, w0, b_eff)?;
    let capped = if b_eff < b { format!(" (capped from b = {b})") } else { String::new() };
    Ok(BoundCheck::evaluate(
        format!("variance-identity(b={b_eff})"),
        MonteCarloEstimate::exact(id.gap(), 1, 0),
        1e-12,
        0.0,
        format!(
            "mini-batch variance by enumeration of {} tuples = {:e} vs moment form \
             (E||grad f||^2 - ||grad F||^2)/b = {:e}{capped}",
            id.tuples, id.enumerated, id.predicted
        ),
    ))
}

/// Envelope for the contraction check: the strongly convex multi-stage rule
/// carries its designed halving envelope; anything else falls back to the
/// geometric envelope from the contraction factors the constants support.
fn contraction_envelope(
    oracle: &dyn StochasticOracle,
    schedule: &ResolvedSchedule,
) -> Result<diagnostics::Envelope, CliError> {
    if let (Some(Regime::MultiLoopStronglyConvex), Some(epsilon)) =
        (schedule.regime, schedule.epsilon)
    {
        return Ok(diagnostics::Envelope::HalvingPlusQuarterEps { epsilon });
    }
    let c = oracle.constants();
    let factors = if c.mu.is_some() {
        schedules::alpha_strongly_convex(schedule.eta, schedule.m as f64, schedule.b as f64, c)
    } else {
        schedules::alpha_growth_bound(schedule.eta, schedule.m as f64, schedule.b as f64, c)
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    if factors.alpha >= 1.0 {
        return Err(CliError::Config(format!(
            "the contraction check needs a contracting schedule, but alpha = {} at \
             eta = {}, m = {}, b = {}",
            factors.alpha, schedule.eta, schedule.m, schedule.b
        )));
    }
    Ok(diagnostics::Envelope::Geometric(factors))
}

fn run_checks(
    oracle: &dyn StochasticOracle,
    w0: &WeightVector,
    spec: &ChecksSpec,
    schedule: &ResolvedSchedule,
    solver: SolverName,
    seed_base: u64,
    default_reps: usize,
) -> Result<Vec<BoundCheck>, CliError> {
    let mut checks = Vec::new();
    if !spec.any_enabled() {
        return Ok(checks);
    }
    let reps = spec.check_replications.unwrap_or(default_reps);
    if spec.identity {
        checks.push(identity_check(oracle, w0, schedule.b)?);
    }
    if spec.variance_decay {
        checks.push(diagnostics::variance_decay_check(
            oracle,
            w0,
            check_v0_mode(solver, schedule.b),
            schedule.eta,
            schedule.m,
            reps,
            seed_base,
            spec.margin_sigmas,
        )?);
    }
    if spec.contraction {
        let stages = spec.stages.unwrap_or(schedule.outer_loops).max(1);
        let envelope = contraction_envelope(oracle, schedule)?;
        checks.extend(diagnostics::contraction_check(
            oracle,
            w0,
            schedule.eta,
            schedule.m,
            schedule.b,
            stages,
            envelope,
            reps,
            seed_base,
            spec.margin_sigmas,
        )?);
    }
    Ok(checks)
}

/// Trace controls for a run: thinning kicks in past 10^4 steps per stage
/// unless a full trace was asked for.
pub fn trace_options(out: &OutputSpec, m: usize) -> TraceOptions {
    TraceOptions {
        record_steps: out.trace,
        thin: if out.full_trace { 1 } else { thin_for(m) },
        record_full_grad: out.record_full_grad,
        record_value: out.record_value,
        record_states: false,
    }
}
