//! Canned diagnostic suites behind `verify <suite>`: fixed seeded instances
//! at desk scale, each printing one verdict line per check.

use std::time::Instant;

use isarah::diagnostics::{
    self, fixtures::SigmoidMixture, BoundCheck, Envelope,
};
use isarah::oracle::StochasticOracle;
use isarah::problems::{make_quadratic, QuadraticFiniteSum};
use isarah::schedules::{self, Regime};
use isarah::solvers::V0Mode;
use isarah::vector::WeightVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::CliError;

const MARGIN: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Identity,
    VarianceDecay,
    OneLoopConvex,
    OneLoopNonConvex,
    Contraction,
    Slope,
    All,
}

impl Suite {
    pub const NAMES: &'static [&'static str] = &[
        "identity",
        "variance-decay",
        "one-loop-convex",
        "one-loop-nonconvex",
        "contraction",
        "slope",
        "all",
    ];

    pub fn parse(name: &str) -> Result<Suite, CliError> {
        match name.replace('_', "-").as_str() {
            "identity" => Ok(Suite::Identity),
            "variance-decay" => Ok(Suite::VarianceDecay),
            "one-loop-convex" => Ok(Suite::OneLoopConvex),
            "one-loop-nonconvex" => Ok(Suite::OneLoopNonConvex),
            "contraction" => Ok(Suite::Contraction),
            "slope" => Ok(Suite::Slope),
            "all" => Ok(Suite::All),
            other => Err(CliError::Config(format!(
                "unknown suite '{other}'; expected one of {}",
                Suite::NAMES.join(", ")
            ))),
        }
    }
}

/// Runs the suite; `Ok` means every check in it passed.
pub fn run_suite(suite: Suite) -> Result<(), CliError> {
    let failed = match suite {
        Suite::Identity => identity()?,
        Suite::VarianceDecay => variance_decay()?,
        Suite::OneLoopConvex => one_loop_convex()?,
        Suite::OneLoopNonConvex => one_loop_nonconvex()?,
        Suite::Contraction => contraction()?,
        Suite::Slope => slope()?,
        Suite::All => {
            let mut total = 0;
            for (i, sub) in [
                Suite::Identity,
                Suite::VarianceDecay,
                Suite::OneLoopConvex,
                Suite::OneLoopNonConvex,
                Suite::Contraction,
                Suite::Slope,
            ]
            .into_iter()
            .enumerate()
            {
                if i > 0 {
                    println!();
                }
                total += match sub {
                    Suite::Identity => identity()?,
                    Suite::VarianceDecay => variance_decay()?,
                    Suite::OneLoopConvex => one_loop_convex()?,
                    Suite::OneLoopNonConvex => one_loop_nonconvex()?,
                    Suite::Contraction => contraction()?,
                    Suite::Slope => slope()?,
                    Suite::All => unreachable!(),
                };
            }
            total
        }
    };
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}

fn report(checks: &[BoundCheck]) -> usize {
    for check in checks {
        println!("{check}");
    }
    checks.iter().filter(|c| !c.passed).count()
}

/// Mini-batch variance identity by full tuple enumeration over a grid of
/// small quadratics and batch sizes, at 5 random points each.
fn identity() -> Result<usize, CliError> {
    let started = Instant::now();
    println!("suite identity: enumerated mini-batch variance vs moment form");
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1_100);
    for n in 1..=4usize {
        let problem = make_quadratic(n, 2, 2.0, &mut rng)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut n_worst = 0.0f64;
        for b in 1..=4usize {
            for _ in 0..5 {
                let w = WeightVector::new(vec![
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ]);
                let id = diagnostics::minibatch_variance_identity(&problem, &w, b)?;
                n_worst = n_worst.max(id.gap().abs());
            }
        }
        println!("  n = {n}: max |enumerated - predicted| = {n_worst:.3e} over b in 1..4");
        worst = worst.max(n_worst);
    }
    let passed = worst < 1e-12;
    println!(
        "{} variance-identity: max gap {worst:.3e} vs 1e-12 ({:.2}s)",
        if passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    Ok(usize::from(!passed))
}

/// Geometric decay of the recursive direction on conditioned quadratics at
/// kappa in {2, 10}.
fn variance_decay() -> Result<usize, CliError> {
    let started = Instant::now();
    println!("suite variance-decay: ||v_t||^2 under the recursive estimator");
    let mut checks = Vec::new();
    for (i, kappa) in [2.0, 10.0].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2_100 + i as u64);
        let problem =
            make_quadratic(16, 1, kappa, &mut rng).map_err(|e| CliError::Config(e.to_string()))?;
        let w_star = problem.constants().w_star.clone().expect("strongly convex");
        let w0 = WeightVector::new(vec![w_star[0] + 1.0]);
        let eta = 1.0 / problem.constants().lipschitz;
        checks.push(diagnostics::variance_decay_check(
            &problem,
            &w0,
            V0Mode::ExactFullGradient,
            eta,
            12,
            300,
            2_200 + 10 * i as u64,
            MARGIN,
        )?);
    }
    let failed = report(&checks);
    println!("suite variance-decay done ({:.2}s)", started.elapsed().as_secs_f64());
    Ok(failed)
}

/// Two opposed unit quadratics (sigma*^2 = 1) pitted against the one-stage
/// convex guarantee at m = 63.
fn one_loop_convex() -> Result<usize, CliError> {
    let started = Instant::now();
    println!("suite one-loop-convex: mean output gradient vs the one-stage bound");
    let problem = opposed_quadratic(1.0)?;
    let w0 = WeightVector::new(vec![1.0]);
    let check = diagnostics::one_loop_convex_bound_check(&problem, &w0, 63, 200, 3_100, MARGIN)?;
    let failed = report(std::slice::from_ref(&check));
    println!("suite one-loop-convex done ({:.2}s)", started.elapsed().as_secs_f64());
    Ok(failed)
}

/// Non-convex sigmoid mixture against the one-stage smooth guarantee.
fn one_loop_nonconvex() -> Result<usize, CliError> {
    let started = Instant::now();
    println!("suite one-loop-nonconvex: mean output gradient vs the smooth one-stage bound");
    let problem = SigmoidMixture::standard();
    let w0 = WeightVector::new(vec![0.25]);
    let check =
        diagnostics::one_loop_nonconvex_bound_check(&problem, &w0, 24, 200, 4_100, MARGIN)?;
    let failed = report(std::slice::from_ref(&check));
    println!("suite one-loop-nonconvex done ({:.2}s)", started.elapsed().as_secs_f64());
    Ok(failed)
}

/// Multi-stage halving on a kappa = 5 quadratic at epsilon = 1e-2.
fn contraction() -> Result<usize, CliError> {
    let started = Instant::now();
    println!("suite contraction: per-stage envelope of the multi-stage rule");
    let epsilon = 1e-2;
    let mut rng = ChaCha8Rng::seed_from_u64(5_100);
    let problem =
        make_quadratic(16, 1, 5.0, &mut rng).map_err(|e| CliError::Config(e.to_string()))?;
    let w_star = problem.constants().w_star.clone().expect("strongly convex");
    let w0 = WeightVector::new(vec![w_star[0] + 1.0]);
    let g0 = diagnostics::measured_grad_norm_sq(&problem, &w0, 5_200)?;
    let schedule =
        schedules::multi_loop_strongly_convex(problem.constants(), epsilon, g0)
            .map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "  schedule: eta = {}, m = {}, b = {}, {} stages",
        schedule.eta, schedule.m, schedule.b, schedule.outer_loops
    );
    let checks = diagnostics::contraction_check(
        &problem,
        &w0,
        schedule.eta,
        schedule.m,
        schedule.b,
        schedule.outer_loops,
        Envelope::HalvingPlusQuarterEps { epsilon },
        100,
        5_300,
        MARGIN,
    )?;
    let failed = report(&checks);
    println!("suite contraction done ({:.2}s)", started.elapsed().as_secs_f64());
    Ok(failed)
}

/// Work-versus-accuracy slopes of the epsilon-driven rules on log-log axes.
fn slope() -> Result<usize, CliError> {
    let started = Instant::now();
    println!("suite slope: log-log work against 1/epsilon");
    let epsilons = [1e-1, 1e-2, 1e-3];
    let mut failed = 0;

    // Small start and small noise keep the square-law stage lengths at desk
    // scale: 6 L dF + 2 sigma*^2 = 0.22.
    let convex = opposed_quadratic(0.05f64.sqrt())?;
    let w0 = WeightVector::new(vec![0.2]);
    let fit =
        diagnostics::complexity_slope(&convex, &w0, Regime::OneLoopConvex, &epsilons, 10, 6_100, MARGIN)?;
    failed += usize::from(!report_slope("one-loop-convex", &fit, 1.7, 2.3));

    let (strong, w0) = spread_quadratic();
    let fit = diagnostics::complexity_slope(
        &strong,
        &w0,
        Regime::MultiLoopStronglyConvex,
        &epsilons,
        10,
        7_100,
        MARGIN,
    )?;
    failed += usize::from(!report_slope("multi-loop-strongly-convex", &fit, 0.7, 1.3));

    println!("suite slope done ({:.2}s)", started.elapsed().as_secs_f64());
    Ok(failed)
}

fn report_slope(label: &str, fit: &diagnostics::SlopeFit, lo: f64, hi: f64) -> bool {
    let passed = fit.slope >= lo && fit.slope <= hi;
    let works: Vec<String> = fit
        .points
        .iter()
        .map(|p| format!("eps = {:e} -> {} evals", p.epsilon, p.work))
        .collect();
    println!(
        "{} slope({label}): {:.3} in [{lo}, {hi}]; {}",
        if passed { "PASS" } else { "FAIL" },
        fit.slope,
        works.join(", ")
    );
    passed
}

/// n = 2 quadratic with unit curvature and shifts at +-s: the optimum sits at
/// zero with sigma*^2 = s^2 exactly.
pub fn opposed_quadratic(s: f64) -> Result<QuadraticFiniteSum, CliError> {
    QuadraticFiniteSum::new(vec![vec![1.0], vec![1.0]], vec![vec![s], vec![-s]])
        .map_err(|e| CliError::Config(e.to_string()))
}

/// kappa = 5 one-dimensional finite sum with wide shifts, so the optimum
/// noise sigma*^2 is order one and the epsilon-driven batch rule dominates
/// the work; started far out so several halvings are needed.
pub fn spread_quadratic() -> (QuadraticFiniteSum, WeightVector) {
    let n = 32usize;
    let kappa = 5.0;
    let soft = (n as f64 - kappa) / ((n as f64 - 1.0) * kappa);
    let mut diagonals = vec![vec![soft]; n - 1];
    diagonals.push(vec![1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(7_000);
    let shifts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-10.0..=10.0)]).collect();
    let problem = QuadraticFiniteSum::new(diagonals, shifts).expect("valid by construction");
    let w_star = problem.constants().w_star.clone().expect("strongly convex");
    let w0 = WeightVector::new(vec![w_star[0] + 316.0]);
    (problem, w0)
}
