//! Result files: one trace CSV per run plus a versioned summary JSON.
//!
//! The CSV column set is fixed: run, seed, solver, stage, t, grad_evals,
//! v_norm_sq, grad_norm_sq, value. Floats are written in shortest
//! round-trip form, so a re-run with identical seeds produces byte-identical
//! files. Wall-clock time lives only in the summary JSON, which is the one
//! output allowed to differ between identical runs.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use isarah::diagnostics::{BoundCheck, MonteCarloEstimate};
use isarah::solvers::RunTrace;
use serde::Serialize;

use crate::config::SolverName;
use crate::CliError;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// One recorded step of one run, exactly one CSV row.
#[derive(Debug, Serialize)]
pub struct ResultRow<'a> {
    pub run: usize,
    pub seed: u64,
    pub solver: &'a str,
    pub stage: usize,
    pub t: usize,
    pub grad_evals: u64,
    pub v_norm_sq: f64,
    pub grad_norm_sq: Option<f64>,
    pub value: Option<f64>,
}

/// Everything one replication produced.
#[derive(Debug)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub trace: RunTrace,
}

pub fn trace_path(dir: &Path, run: usize) -> PathBuf {
    dir.join(format!("trace_{run:04}.csv"))
}

/// Writes one run's step records as a trace CSV.
pub fn write_trace(
    dir: &Path,
    solver: SolverName,
    result: &RunResult,
) -> Result<PathBuf, CliError> {
    let path = trace_path(dir, result.run);
    let file = File::create(&path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let solver = solver.to_string();
    for step in &result.trace.steps {
        writer
            .serialize(ResultRow {
                run: result.run,
                seed: result.seed,
                solver: &solver,
                stage: step.stage,
                t: step.t,
                grad_evals: step.grad_evals,
                v_norm_sq: step.v_norm_sq,
                grad_norm_sq: step.grad_norm_sq,
                value: step.value,
            })
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Io(format!("cannot flush {}: {e}", path.display())))?;
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct ScheduleSummary {
    pub eta: f64,
    pub m: usize,
    pub b: usize,
    pub outer_loops: usize,
    pub cost_per_stage: u64,
    pub total_cost: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct StageSummary {
    pub stage: usize,
    pub chosen_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub grad_evals: u64,
    pub stages: Vec<StageSummary>,
}

/// Monte-Carlo means over the ensemble, present when at least two runs
/// recorded the quantity.
#[derive(Debug, Default, Serialize)]
pub struct Aggregates {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_v_norm_sq: Option<MonteCarloEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_grad_norm_sq: Option<MonteCarloEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_value: Option<MonteCarloEstimate>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub solver: String,
    pub problem: String,
    pub replications: usize,
    pub seed_base: u64,
    pub workers: usize,
    pub thin: usize,
    pub schedule: ScheduleSummary,
    pub wall_time_seconds: f64,
    pub runs: Vec<RunSummary>,
    pub aggregates: Aggregates,
    pub checks: Vec<BoundCheck>,
    pub all_checks_passed: bool,
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<PathBuf, CliError> {
    let path = dir.join("summary.json");
    let file = File::create(&path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, summary)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_all(b"\n")
        .and_then(|_| writer.flush())
        .map_err(|e| CliError::Io(format!("cannot flush {}: {e}", path.display())))?;
    Ok(path)
}

/// Ensemble mean of one per-run scalar; None unless every run has it and
/// there are at least two runs.
pub fn aggregate(
    runs: &[RunResult],
    seed_base: u64,
    pick: impl Fn(&RunResult) -> Option<f64>,
) -> Option<MonteCarloEstimate> {
    if runs.len() < 2 {
        return None;
    }
    let samples: Option<Vec<f64>> = runs.iter().map(pick).collect();
    samples.map(|s| MonteCarloEstimate::from_samples(&s, seed_base))
}
