use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isarah::oracle::ProblemConstants;
use isarah::schedules::{self, Regime};
use isarah_cli::{runner, suites, CliError};

#[derive(Parser)]
#[command(
    name = "isarah",
    version,
    about = "Variance-reduced stochastic optimization experiments",
    long_about = "Runs seeded ensembles of variance-reduced solvers (recursive and anchored \
                  estimators plus SGD), derives parameter schedules from problem constants, \
                  and checks measured behavior against the guarantees the schedules are \
                  built on.\n\nExit codes: 0 all good, 1 a check failed, 2 configuration or \
                  usage error, 3 solver divergence."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a TOML config file declares.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
        /// Worker threads for the replication ensemble [default: $ISARAH_WORKERS, else 1].
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a canned diagnostic suite.
    Verify {
        /// One of: identity, variance-decay, one-loop-convex, one-loop-nonconvex,
        /// contraction, slope, all.
        suite: String,
    },
    /// Derive a schedule from problem constants given as flags and print it.
    Schedule {
        /// Rule to apply: one-loop-convex, one-loop-nonconvex,
        /// multi-loop-strongly-convex, or multi-loop-growth-bound.
        #[arg(long)]
        regime: String,
        /// Smoothness constant L of every per-sample gradient.
        #[arg(long, short = 'L')]
        lipschitz: f64,
        /// Strong-convexity modulus of the average objective.
        #[arg(long)]
        mu: Option<f64>,
        /// Mean squared per-sample gradient norm at the optimum.
        #[arg(long)]
        sigma_star_sq: Option<f64>,
        /// Growth-bound factor M in F(w) - F* <= M ||grad F(w)||^2 + N.
        #[arg(long)]
        growth_m: Option<f64>,
        /// Growth-bound offset N.
        #[arg(long)]
        growth_n: Option<f64>,
        /// Target mean squared gradient norm (epsilon-driven rules).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Inner loop length (m-driven rules).
        #[arg(long)]
        m: Option<usize>,
        /// Measured F(w0) - F*, needed by the epsilon-driven one-loop convex rule.
        #[arg(long)]
        delta_f: Option<f64>,
        /// Measured ||grad F(w0)||^2, used by the multi-stage rules to count stages.
        #[arg(long, default_value_t = 1.0)]
        grad0_norm_sq: f64,
        /// Print a pasteable [schedule] config block instead of the report.
        #[arg(long)]
        toml: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, workers } => runner::run_experiment(&config, workers),
        Command::Verify { suite } => {
            suites::Suite::parse(&suite).and_then(suites::run_suite)
        }
        Command::Schedule {
            regime,
            lipschitz,
            mu,
            sigma_star_sq,
            growth_m,
            growth_n,
            epsilon,
            m,
            delta_f,
            grad0_norm_sq,
            toml,
        } => schedule_verb(
            &regime,
            lipschitz,
            mu,
            sigma_star_sq,
            growth_m,
            growth_n,
            epsilon,
            m,
            delta_f,
            grad0_norm_sq,
            toml,
        ),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn schedule_verb(
    regime: &str,
    lipschitz: f64,
    mu: Option<f64>,
    sigma_star_sq: Option<f64>,
    growth_m: Option<f64>,
    growth_n: Option<f64>,
    epsilon: Option<f64>,
    m: Option<usize>,
    delta_f: Option<f64>,
    grad0_norm_sq: f64,
    toml: bool,
) -> Result<(), CliError> {
    let regime: Regime = regime.replace('_', "-").parse().map_err(CliError::Config)?;
    if !(lipschitz.is_finite() && lipschitz > 0.0) {
        return Err(CliError::Config(format!(
            "lipschitz must be positive and finite, got {lipschitz}"
        )));
    }
    let mut c = ProblemConstants::new(lipschitz);
    c.mu = mu;
    c.sigma_star_sq = sigma_star_sq;
    c.growth_m = growth_m;
    c.growth_n = growth_n;
    c.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let schedule = schedules::derive(&c, regime, epsilon, m, delta_f, Some(grad0_norm_sq))
        .map_err(|e| CliError::Config(e.to_string()))?;

    if toml {
        println!("[schedule]");
        println!("eta = {}", schedule.eta);
        println!("m = {}", schedule.m);
        println!("b = {}", schedule.b);
        println!("outer_loops = {}", schedule.outer_loops);
    } else {
        println!("regime = {}", schedule.regime);
        println!("eta = {}", schedule.eta);
        println!("m = {}", schedule.m);
        println!("b = {}", schedule.b);
        println!("outer_loops = {}", schedule.outer_loops);
        println!("cost_per_stage = {}", schedule.cost_per_stage());
        println!("total_cost = {}", schedule.total_cost());
        println!("rule: {}", schedule.provenance);
    }
    Ok(())
}
