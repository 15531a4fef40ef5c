//! Acceptance gate: one test per shipping criterion, each printing a single
//! PASS line (visible under --nocapture) and enforcing its wall-clock budget.
//! Every numeric tolerance here is part of the contract; loosening one is a
//! breaking change, not a test fix.

use std::fs;
use std::time::{Duration, Instant};

use isarah::diagnostics::{
    self, fixtures::SigmoidMixture, DecayProfile, Envelope,
};
use isarah::oracle::{ProblemConstants, RngStreams, SampleId, StochasticOracle};
use isarah::problems::{
    make_quadratic, LogisticProblem, ModifiedLogistic1D, NoisyQuadratic,
};
use isarah::schedules::{self, Regime};
use isarah::solvers::{
    variance_reduced_outer, EstimatorKind, TraceOptions, V0Mode,
};
use isarah::vector::WeightVector;
use isarah_cli::suites::{opposed_quadratic, spread_quadratic};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MARGIN: f64 = 4.0;

fn budget(label: &str, started: Instant, limit: Duration) -> f64 {
    let elapsed = started.elapsed();
    assert!(
        elapsed <= limit,
        "{label} exceeded its time budget: {:.2}s > {:.0}s",
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    elapsed.as_secs_f64()
}

/// Mini-batch variance identity on a grid of small finite sums, checked by
/// full enumeration of every sampling tuple.
#[test]
fn a01_minibatch_variance_identity_enumerated() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for n in 1..=4usize {
        let problem = make_quadratic(n, 2, 2.0, &mut rng).unwrap();
        for b in 1..=4usize {
            for _ in 0..5 {
                let w = WeightVector::new(vec![
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ]);
                let id = diagnostics::minibatch_variance_identity(&problem, &w, b).unwrap();
                worst = worst.max(id.gap().abs());
            }
        }
    }
    assert!(worst < 1e-12, "identity gap {worst:.3e} >= 1e-12");
    let secs = budget("A1", started, Duration::from_secs(1));
    println!("PASS A1: enumerated vs predicted mini-batch variance, max gap {worst:.3e} < 1e-12 over n,b in 1..4 ({secs:.2}s)");
}

/// At the multi-stage rule's unrounded parameters the strongly convex
/// contraction factor is exactly one half.
#[test]
fn a02_rule_contraction_factor_is_one_half() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for kappa in [1.5, 2.0, 5.0, 10.0, 100.0] {
        for l in [0.5, 1.0, 3.0] {
            let mut c = ProblemConstants::new(l);
            c.mu = Some(l / kappa);
            c.sigma_star_sq = Some(1.0);
            let eta = 2.0 / (5.0 * l);
            let m = 20.0 * kappa - 1.0;
            let b = 20.0 * kappa - 10.0;
            let factors = schedules::alpha_strongly_convex(eta, m, b, &c).unwrap();
            worst = worst.max((factors.alpha - 0.5).abs());
        }
    }
    assert!(worst < 1e-15, "alpha deviates from 1/2 by {worst:.3e}");
    let secs = budget("A2", started, Duration::from_secs(1));
    println!("PASS A2: alpha = 1/2 at the unrounded rule parameters, worst |alpha - 1/2| = {worst:.3e} < 1e-15 ({secs:.2}s)");
}

fn decay_instance(kappa: f64, seed: u64) -> (impl StochasticOracle, WeightVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = make_quadratic(16, 1, kappa, &mut rng).unwrap();
    let w_star = problem.constants().w_star.clone().unwrap();
    let w0 = WeightVector::new(vec![w_star[0] + 1.0]);
    (problem, w0)
}

fn decay_profile(
    kappa: f64,
    estimator: EstimatorKind,
    m: usize,
    replications: usize,
) -> DecayProfile {
    let (problem, w0) = decay_instance(kappa, 300 + kappa as u64);
    let eta = 1.0 / problem.constants().lipschitz;
    diagnostics::variance_decay_profile(
        &problem,
        &w0,
        estimator,
        V0Mode::ExactFullGradient,
        eta,
        m,
        replications,
        310 + kappa as u64,
    )
    .unwrap()
}

/// Geometric decay of the recursive direction at every inner step.
#[test]
fn a03_recursive_direction_decays_geometrically() {
    let started = Instant::now();
    for kappa in [2.0, 10.0] {
        let profile = decay_profile(kappa, EstimatorKind::Recursive, 20, 1000);
        let rate = 1.0 - 1.0 / (kappa * kappa);
        for (t, est) in &profile.per_step {
            let bound = rate.powi(*t as i32) * profile.v0_norm_sq;
            let rel_se = if est.mean > 0.0 { est.std_error / est.mean } else { 0.0 };
            assert!(
                est.mean <= bound * (1.0 + MARGIN * rel_se),
                "kappa = {kappa}, t = {t}: mean {:.6e} above (1 - 1/kappa^2)^t ||v_0||^2 = {bound:.6e} with 4-sigma relative slack",
                est.mean
            );
        }
    }
    let secs = budget("A3", started, Duration::from_secs(30));
    println!("PASS A3: mean ||v_t||^2 <= (1 - 1/kappa^2)^t ||v_0||^2 at every t for kappa in {{2, 10}}, 1000 replications ({secs:.2}s)");
}

/// The recursive estimator keeps contracting to the end of the stage; the
/// anchored one plateaus an order of magnitude higher.
#[test]
fn a04_recursive_beats_anchored_at_stage_end() {
    let started = Instant::now();
    let m = 20usize;
    let t_last = m - 1;
    for kappa in [2.0, 10.0] {
        let sarah = decay_profile(kappa, EstimatorKind::Recursive, m, 1000);
        let svrg = decay_profile(kappa, EstimatorKind::Anchored, m, 1000);
        let rate = 1.0 - 1.0 / (kappa * kappa);

        let last = |p: &DecayProfile| {
            let (_, est) = p
                .per_step
                .iter()
                .find(|(t, _)| *t == t_last)
                .expect("stage records its last step");
            est.mean / p.v0_norm_sq
        };
        let sarah_ratio = last(&sarah);
        let svrg_ratio = last(&svrg);
        let bound = 1.5 * rate.powi(t_last as i32);
        assert!(
            sarah_ratio <= bound,
            "kappa = {kappa}: recursive ratio {sarah_ratio:.4e} above 1.5 (1 - 1/kappa^2)^{t_last} = {bound:.4e}"
        );
        assert!(
            svrg_ratio > 10.0 * sarah_ratio,
            "kappa = {kappa}: anchored ratio {svrg_ratio:.4e} not more than 10x the recursive {sarah_ratio:.4e}"
        );
    }
    let secs = budget("A4", started, Duration::from_secs(60));
    println!("PASS A4: at t = {t_last} the recursive ratio sits under 1.5x the geometric envelope and the anchored ratio is more than 10x larger, kappa in {{2, 10}} ({secs:.2}s)");
}

/// One-stage convex guarantee on the two-component instance with unit
/// optimum noise, at the rule's own schedule.
#[test]
fn a05_one_loop_convex_bound_holds() {
    let started = Instant::now();
    let problem = opposed_quadratic(1.0).unwrap();
    let m = 63usize;

    let schedule = schedules::one_loop_convex(problem.constants(), m).unwrap();
    assert_eq!(schedule.eta, 0.125, "eta = 1/(L sqrt(m+1)) at L = 1, m = 63");
    assert_eq!(schedule.b, 16, "b = ceil(2 sqrt(m+1)) at m = 63");

    let w0 = WeightVector::new(vec![1.0]);
    let check =
        diagnostics::one_loop_convex_bound_check(&problem, &w0, m, 500, 501, MARGIN).unwrap();
    assert!(
        (check.bound - 0.625).abs() < 1e-15,
        "(6 L dF + 2 sigma*^2)/sqrt(m+1) should be exactly 0.625, got {}",
        check.bound
    );
    assert!(
        check.passed,
        "mean output gradient {:.4e} above {} + 4 sigma",
        check.measured.mean, check.bound
    );
    let secs = budget("A5", started, Duration::from_secs(60));
    println!(
        "PASS A5: E||grad F(w~)||^2 = {:.4} <= 0.625 (4-sigma margin, 500 replications) ({secs:.2}s)",
        check.measured.mean
    );
}

/// Five halving stages of the multi-stage rule, each checked against
/// g0/2^s + eps/4.
#[test]
fn a06_multi_stage_halving_envelope() {
    let started = Instant::now();
    let epsilon = 1e-2;
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let problem = make_quadratic(16, 1, 5.0, &mut rng).unwrap();
    let w_star = problem.constants().w_star.clone().unwrap();
    let w0 = WeightVector::new(vec![w_star[0] + 1.0]);
    let g0 = diagnostics::measured_grad_norm_sq(&problem, &w0, 602).unwrap();
    let schedule =
        schedules::multi_loop_strongly_convex(problem.constants(), epsilon, g0).unwrap();

    let stages = 5usize;
    let checks = diagnostics::contraction_check(
        &problem,
        &w0,
        schedule.eta,
        schedule.m,
        schedule.b,
        stages,
        Envelope::HalvingPlusQuarterEps { epsilon },
        200,
        603,
        MARGIN,
    )
    .unwrap();
    // One row per stage plus the deterministic s = 0 start row.
    assert_eq!(checks.len(), stages + 1);
    for check in &checks {
        assert!(
            check.passed,
            "stage envelope violated: {} (mean {:.4e} vs bound {:.4e})",
            check.label, check.measured.mean, check.bound
        );
    }
    let secs = budget("A6", started, Duration::from_secs(300));
    println!("PASS A6: mean stage outputs under g0/2^s + eps/4 for s = 1..{stages} at eps = {epsilon}, kappa = 5, 200 replications ({secs:.2}s)");
}

/// Work-versus-accuracy slopes of the epsilon-driven rules: square law for
/// the one-stage convex rule, first power for the multi-stage rule with
/// nonzero optimum noise.
#[test]
fn a07_complexity_slopes_match_the_rules() {
    let started = Instant::now();
    let epsilons = [1e-1, 1e-2, 1e-3];

    let convex = opposed_quadratic(0.05f64.sqrt()).unwrap();
    let w0 = WeightVector::new(vec![0.2]);
    let fit = diagnostics::complexity_slope(
        &convex,
        &w0,
        Regime::OneLoopConvex,
        &epsilons,
        40,
        701,
        MARGIN,
    )
    .unwrap();
    assert!(
        (1.7..=2.3).contains(&fit.slope),
        "one-stage convex slope {:.3} outside [1.7, 2.3]",
        fit.slope
    );
    let convex_slope = fit.slope;

    let (strong, w0) = spread_quadratic();
    assert!(strong.constants().sigma_star_sq.unwrap() > 0.0);
    let fit = diagnostics::complexity_slope(
        &strong,
        &w0,
        Regime::MultiLoopStronglyConvex,
        &epsilons,
        40,
        702,
        MARGIN,
    )
    .unwrap();
    assert!(
        (0.7..=1.3).contains(&fit.slope),
        "multi-stage strongly convex slope {:.3} outside [0.7, 1.3]",
        fit.slope
    );
    let secs = budget("A7", started, Duration::from_secs(600));
    println!(
        "PASS A7: log-log work slopes {convex_slope:.3} in [1.7, 2.3] and {:.3} in [0.7, 1.3] over eps in 1e-1..1e-3 ({secs:.2}s)",
        fit.slope
    );
}

/// Conditional unbiasedness as an executable identity: averaging each logged
/// step's direction over every sample reproduces the full-gradient form.
#[test]
fn a08_directions_average_to_their_conditional_means() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let problem = make_quadratic(3, 2, 2.0, &mut rng).unwrap();
    let n = problem.n_components().unwrap();
    let w_star = problem.constants().w_star.clone().unwrap();
    let mut w0 = WeightVector::new(vec![1.0, -1.0]);
    w0.axpy(1.0, &w_star);

    let opts = TraceOptions { record_states: true, ..Default::default() };
    let m = 21usize;

    let xi_mean = |f: &dyn Fn(SampleId) -> WeightVector| {
        let mut acc = WeightVector::zeros(problem.dim());
        for i in 0..n {
            acc.axpy(1.0 / n as f64, &f(SampleId::new(i as u64)));
        }
        acc
    };
    let gap = |a: &WeightVector, b: &WeightVector| {
        let mut d = a.clone();
        d.axpy(-1.0, b);
        d.norm()
    };

    for estimator in [EstimatorKind::Recursive, EstimatorKind::Anchored] {
        let mut streams = RngStreams::from_seed(802);
        let (_, trace) = variance_reduced_outer(
            &problem,
            &w0,
            estimator,
            V0Mode::ExactFullGradient,
            0.5,
            m,
            1,
            &mut streams,
            &opts,
        )
        .unwrap();
        assert_eq!(trace.steps.len(), m);

        let anchor = trace.steps[0].state.as_ref().expect("t = 0 carries state");
        assert!(anchor.xi.is_none());
        assert_eq!(gap(&anchor.w_prev, &anchor.w_curr), 0.0);

        let mut checked = 0usize;
        for rec in &trace.steps[1..] {
            let st = rec.state.as_ref().expect("record_states keeps every step");
            let xi = st.xi.expect("inner steps log their sample");

            // Replay the update at the logged sample.
            let (base_w, base_v) = match estimator {
                EstimatorKind::Recursive => (&st.w_prev, &st.v_prev),
                EstimatorKind::Anchored => (&anchor.w_curr, &anchor.v_curr),
            };
            let mut replay = problem.grad_sample(&st.w_curr, xi);
            replay.axpy(-1.0, &problem.grad_sample(base_w, xi));
            replay.axpy(1.0, base_v);
            assert!(
                gap(&replay, &st.v_curr) < 1e-12,
                "logged direction does not replay at t = {}",
                rec.t
            );

            // Average the update over all samples and compare against the
            // conditional mean in full-gradient form.
            let mean = xi_mean(&|xi| {
                let mut v = problem.grad_sample(&st.w_curr, xi);
                v.axpy(-1.0, &problem.grad_sample(base_w, xi));
                v.axpy(1.0, base_v);
                v
            });
            let expected = match estimator {
                EstimatorKind::Recursive => {
                    let mut e = problem.grad_full(&st.w_curr).unwrap();
                    e.axpy(-1.0, &problem.grad_full(&st.w_prev).unwrap());
                    e.axpy(1.0, &st.v_prev);
                    e
                }
                // The exact anchor direction makes the correction terms
                // cancel in expectation, leaving the full gradient alone.
                EstimatorKind::Anchored => problem.grad_full(&st.w_curr).unwrap(),
            };
            assert!(
                gap(&mean, &expected) < 1e-12,
                "sample-averaged direction misses its conditional mean at t = {} ({:?})",
                rec.t,
                estimator
            );
            checked += 1;
        }
        assert_eq!(checked, 20, "m = 21 must log 20 sampled steps");
    }
    let secs = budget("A8", started, Duration::from_secs(1));
    println!("PASS A8: 20 logged directions per estimator average over all samples to their full-gradient form within 1e-12 ({secs:.2}s)");
}

/// Same seeds, same bytes: repeated runs and different worker counts write
/// identical traces.
#[test]
fn a09_runs_are_byte_deterministic() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let make = |sub: &str| {
        let out = dir.path().join(sub);
        let cfg = dir.path().join(format!("{sub}.toml"));
        fs::write(
            &cfg,
            format!(
                "solver = \"isarah\"\n\
                 replications = 4\n\
                 seed_base = 900\n\n\
                 [problem]\n\
                 kind = \"quadratic\"\n\
                 n = 8\n\
                 d = 2\n\
                 kappa = 3.0\n\
                 instance_seed = 901\n\n\
                 [start]\n\
                 offset_from_optimum = [0.7, -0.7]\n\n\
                 [schedule]\n\
                 eta = 0.3\n\
                 m = 50\n\
                 b = 4\n\
                 outer_loops = 2\n\n\
                 [output]\n\
                 directory = \"{}\"\n\
                 record_full_grad = true\n\
                 record_value = true\n",
                out.display()
            ),
        )
        .unwrap();
        cfg
    };
    for (sub, workers) in [("first", "1"), ("second", "1"), ("third", "3")] {
        let cfg = make(sub);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_isarah"))
            .args(["run", cfg.to_str().unwrap(), "--workers", workers])
            .output()
            .unwrap();
        assert_eq!(status.status.code(), Some(0));
    }
    for run in 0..4 {
        let name = format!("trace_{run:04}.csv");
        let first = fs::read(dir.path().join("first").join(&name)).unwrap();
        assert!(!first.is_empty());
        for sub in ["second", "third"] {
            assert_eq!(
                first,
                fs::read(dir.path().join(sub).join(&name)).unwrap(),
                "{name} differs under {sub}"
            );
        }
    }
    let secs = budget("A9", started, Duration::from_secs(60));
    println!("PASS A9: 4-replication traces byte-identical across reruns and worker counts 1 and 3 ({secs:.2}s)");
}

/// Finite-difference audit of every built-in per-sample gradient.
#[test]
fn a10_builtin_gradients_pass_finite_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let quad = make_quadratic(5, 3, 4.0, &mut rng).unwrap();
    let noisy = NoisyQuadratic::new(
        vec![1.0, 0.5, 2.0],
        vec![0.0, 1.0, -1.0],
        vec![0.3, 0.2, 0.4],
    )
    .unwrap();
    let features: Vec<Vec<f64>> =
        (0..6).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let labels: Vec<f64> = (0..6).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let logistic = LogisticProblem::new(features, labels, 0.1).unwrap();
    let modified = ModifiedLogistic1D::new(0.5).unwrap();
    let mixture = SigmoidMixture::standard();

    let audits: Vec<(&str, f64)> = vec![
        ("quadratic", diagnostics::grad_fd_check(&quad, 25, 1002)),
        ("noisy-quadratic", diagnostics::grad_fd_check(&noisy, 25, 1003)),
        ("logistic", diagnostics::grad_fd_check(&logistic, 25, 1004)),
        ("modified-logistic", diagnostics::grad_fd_check(&modified, 25, 1005)),
        ("sigmoid-mixture", diagnostics::grad_fd_check(&mixture, 25, 1006)),
    ];
    let mut worst = ("", 0.0f64);
    for (name, err) in &audits {
        assert!(*err < 1e-5, "{name}: finite-difference relative error {err:.3e} >= 1e-5");
        if *err > worst.1 {
            worst = (name, *err);
        }
    }
    let secs = budget("A10", started, Duration::from_secs(5));
    println!(
        "PASS A10: worst finite-difference relative error {:.3e} < 1e-5 ({}) across all built-in objectives ({secs:.2}s)",
        worst.1, worst.0
    );
}
