//! Finite sums of diagonal quadratics.
//!
//! Component i is f_i(w) = 1/2 (w - c_i)' A_i (w - c_i) with A_i diagonal and
//! non-negative. Everything about the average objective is closed-form, which
//! makes this the workhorse for bound checks: smoothness L = max_ij a_ij,
//! strong convexity mu = min_j mean_i a_ij, the optimum is a per-coordinate
//! weighted mean of the shifts, and the gradient noise at the optimum is
//! computed exactly.

use crate::oracle::{uniform_component, ProblemConstants, SampleId, StochasticOracle};
use crate::problems::ProblemError;
use crate::vector::WeightVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct QuadraticFiniteSum {
    diagonals: Vec<WeightVector>,
    shifts: Vec<WeightVector>,
    constants: ProblemConstants,
}

impl QuadraticFiniteSum {
    /// Builds the finite sum from per-component diagonals and shifts.
    /// Diagonal entries must be non-negative (each component is convex) and at
    /// least one entry must be positive.
    pub fn new(diagonals: Vec<Vec<f64>>, shifts: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        let n = diagonals.len();
        if n == 0 {
            return Err(ProblemError::InvalidArgument("need at least one component".into()));
        }
        if shifts.len() != n {
            return Err(ProblemError::InvalidArgument(format!(
                "{} diagonals but {} shifts",
                n,
                shifts.len()
            )));
        }
        let d = diagonals[0].len();
        if d == 0 {
            return Err(ProblemError::InvalidArgument("dimension must be at least 1".into()));
        }
        for (i, (a, c)) in diagonals.iter().zip(shifts.iter()).enumerate() {
            if a.len() != d || c.len() != d {
                return Err(ProblemError::InvalidArgument(format!(
                    "component {i} has inconsistent dimension"
                )));
            }
            if a.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(ProblemError::InvalidArgument(format!(
                    "component {i} has a negative or non-finite diagonal entry"
                )));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(ProblemError::InvalidArgument(format!(
                    "component {i} has a non-finite shift"
                )));
            }
        }

        let lipschitz = diagonals
            .iter()
            .flat_map(|a| a.iter().copied())
            .fold(0.0f64, f64::max);
        if lipschitz <= 0.0 {
            return Err(ProblemError::InvalidArgument(
                "all diagonal entries are zero; the objective is constant".into(),
            ));
        }

        // Column means of the diagonals give the Hessian of the average.
        let mut col_mean = vec![0.0f64; d];
        for a in &diagonals {
            for (m, &v) in col_mean.iter_mut().zip(a.iter()) {
                *m += v;
            }
        }
        for m in col_mean.iter_mut() {
            *m /= n as f64;
        }
        let mu = col_mean.iter().copied().fold(f64::INFINITY, f64::min);

        let mut constants = ProblemConstants::new(lipschitz);
        constants.n_components = Some(n);

        if mu > 0.0 {
            constants.mu = Some(mu);
            // Unique minimizer: per coordinate, the a-weighted mean of shifts.
            let mut w_star = vec![0.0f64; d];
            for j in 0..d {
                let num: f64 = (0..n).map(|i| diagonals[i][j] * shifts[i][j]).sum();
                w_star[j] = num / (col_mean[j] * n as f64);
            }
            let w_star = WeightVector::new(w_star);

            let f_star: f64 = (0..n)
                .map(|i| {
                    0.5 * (0..d)
                        .map(|j| {
                            let r = w_star[j] - shifts[i][j];
                            diagonals[i][j] * r * r
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n as f64;

            let sigma_star_sq: f64 = (0..n)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            let g = diagonals[i][j] * (w_star[j] - shifts[i][j]);
                            g * g
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n as f64;

            constants.f_star = Some(f_star);
            constants.sigma_star_sq = Some(sigma_star_sq);
            constants.w_star = Some(w_star);
            // Strong convexity gives the growth pair (1/(2 mu), 0).
            constants.growth_m = Some(1.0 / (2.0 * mu));
            constants.growth_n = Some(0.0);
        }

        Ok(QuadraticFiniteSum {
            diagonals: diagonals.into_iter().map(WeightVector::new).collect(),
            shifts: shifts.into_iter().map(WeightVector::new).collect(),
            constants,
        })
    }

    pub fn n(&self) -> usize {
        self.diagonals.len()
    }

    pub fn component_diagonal(&self, i: usize) -> &WeightVector {
        &self.diagonals[i]
    }

    pub fn component_shift(&self, i: usize) -> &WeightVector {
        &self.shifts[i]
    }
}

impl StochasticOracle for QuadraticFiniteSum {
    fn dim(&self) -> usize {
        self.diagonals[0].dim()
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> SampleId {
        uniform_component(self.n(), rng)
    }

    fn value_sample(&self, w: &WeightVector, xi: SampleId) -> f64 {
        let a = &self.diagonals[xi.index()];
        let c = &self.shifts[xi.index()];
        let mut acc = 0.0;
        for j in 0..w.dim() {
            let r = w[j] - c[j];
            acc += a[j] * r * r;
        }
        0.5 * acc
    }

    fn grad_sample(&self, w: &WeightVector, xi: SampleId) -> WeightVector {
        let a = &self.diagonals[xi.index()];
        let c = &self.shifts[xi.index()];
        WeightVector::new((0..w.dim()).map(|j| a[j] * (w[j] - c[j])).collect())
    }
}

/// Builds a random diagonal quadratic finite sum whose realized condition
/// number matches `kappa` (up to float rounding; far inside the 1% gate).
///
/// The construction keeps exact control of both extremes: the last coordinate
/// has every diagonal entry equal to the smoothness constant 1, and the first
/// coordinate has column mean exactly 1/kappa. Per-component spread in the
/// remaining entries is renormalized so column means are exact, which is what
/// pins the condition number. Shifts are uniform on [-1, 1], so the gradient
/// noise at the optimum is generically positive for n >= 2.
///
/// For d = 1 the two extremes share the single column, which is possible only
/// when kappa < n; that case errors out with advice to raise n or d.
pub fn make_quadratic(
    n: usize,
    d: usize,
    kappa: f64,
    rng: &mut ChaCha8Rng,
) -> Result<QuadraticFiniteSum, ProblemError> {
    if n == 0 || d == 0 {
        return Err(ProblemError::InvalidArgument("need n >= 1 and d >= 1".into()));
    }
    if !kappa.is_finite() || kappa < 1.0 {
        return Err(ProblemError::InvalidArgument(format!(
            "condition number target must be finite and >= 1, got {kappa}"
        )));
    }
    let l0 = 1.0f64;

    let diagonals: Vec<Vec<f64>> = if kappa <= 1.0 + 1e-12 {
        vec![vec![l0; d]; n]
    } else if d == 1 {
        if n < 2 || kappa >= n as f64 {
            return Err(ProblemError::InvalidArgument(format!(
                "for d = 1 the construction needs kappa < n (got kappa = {kappa}, n = {n}); \
                 raise n or use d >= 2"
            )));
        }
        // n - 1 soft components and one stiff one; the mean is exactly l0/kappa.
        let soft = l0 * (n as f64 - kappa) / ((n as f64 - 1.0) * kappa);
        let mut col = vec![soft; n - 1];
        col.push(l0);
        col.into_iter().map(|a| vec![a]).collect()
    } else {
        // Column targets: first column mean l0/kappa, last column all l0,
        // middles geometrically spaced up to l0/2.
        let h0 = l0 / kappa;
        let cap = (l0 / 2.0).max(h0);
        let mut targets = vec![0.0f64; d - 1];
        targets[0] = h0;
        for (j, t) in targets.iter_mut().enumerate().skip(1) {
            *t = h0 * (cap / h0).powf(j as f64 / (d - 1) as f64);
        }

        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        for &h in &targets {
            // Spread chosen so every normalized entry stays strictly below l0:
            // with s = (r-1)/(r+1) the worst ratio (1+s)/(1-s) equals r.
            let r = 0.999 * l0 / h;
            let s = ((r - 1.0) / (r + 1.0)).clamp(0.0, 0.3);
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(1.0 - s..=1.0 + s)).collect();
            let mean = raw.iter().sum::<f64>() / n as f64;
            cols.push(raw.into_iter().map(|u| h * u / mean).collect());
        }
        cols.push(vec![l0; n]);

        (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
    };

    let shifts: Vec<Vec<f64>> =
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();

    let problem = QuadraticFiniteSum::new(diagonals, shifts)?;
    let realized = problem.constants().kappa().expect("construction is strongly convex");
    assert!(
        (realized - kappa).abs() <= 0.01 * kappa,
        "realized condition number {realized} misses target {kappa}"
    );
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn grid_w(dim: usize, seed: u64) -> Vec<WeightVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5)
            .map(|_| WeightVector::new((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()))
            .collect()
    }

    #[test]
    fn two_component_scalar_constants() {
        // Components 1/2 w^2 and 3/2 w^2: max entry 3, mean 2, optimum 0.
        let p = QuadraticFiniteSum::new(vec![vec![1.0], vec![3.0]], vec![vec![0.0], vec![0.0]])
            .unwrap();
        let c = p.constants();
        assert_eq!(c.lipschitz, 3.0);
        assert_eq!(c.mu, Some(2.0));
        assert_eq!(c.w_star.as_ref().unwrap().as_slice(), &[0.0]);
        assert_eq!(c.sigma_star_sq, Some(0.0));
        assert_eq!(c.f_star, Some(0.0));
    }

    #[test]
    fn opposed_shifts_give_unit_noise_at_optimum() {
        // Two unit-curvature components centered at -1 and +1: the optimum is
        // 0, each per-component gradient there has norm 1, F* = 1/2.
        let p = QuadraticFiniteSum::new(vec![vec![1.0], vec![1.0]], vec![vec![-1.0], vec![1.0]])
            .unwrap();
        let c = p.constants();
        assert_eq!(c.lipschitz, 1.0);
        assert_eq!(c.mu, Some(1.0));
        assert_eq!(c.w_star.as_ref().unwrap().as_slice(), &[0.0]);
        assert_eq!(c.sigma_star_sq, Some(1.0));
        assert_eq!(c.f_star, Some(0.5));
    }

    #[test]
    fn single_component_identity() {
        let p = QuadraticFiniteSum::new(vec![vec![1.0, 1.0]], vec![vec![0.3, -0.7]]).unwrap();
        let c = p.constants();
        assert_eq!(c.kappa(), Some(1.0));
        assert_eq!(c.sigma_star_sq, Some(0.0));
        assert_eq!(c.w_star.as_ref().unwrap().as_slice(), &[0.3, -0.7]);
    }

    #[test]
    fn gradient_is_diagonal_times_residual() {
        let p = QuadraticFiniteSum::new(
            vec![vec![1.0, 3.0], vec![2.0, 0.5]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let w = WeightVector::new(vec![2.0, 2.0]);
        assert_eq!(p.grad_sample(&w, SampleId::new(0)).as_slice(), &[2.0, 6.0]);
        assert_eq!(p.grad_sample(&w, SampleId::new(1)).as_slice(), &[4.0, 1.0]);
        assert_eq!(p.value_sample(&w, SampleId::new(0)), 0.5 * (4.0 + 12.0));
    }

    #[test]
    fn component_average_matches_full_gradient() {
        // Plain sequential summation as an independent reference for the
        // pairwise reduction used by grad_full.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = make_quadratic(13, 3, 4.0, &mut rng).unwrap();
        for w in grid_w(3, 17) {
            let full = p.grad_full(&w).unwrap();
            let mut naive = [0.0f64; 3];
            for i in 0..p.n() {
                let g = p.grad_sample(&w, SampleId::new(i as u64));
                for j in 0..3 {
                    naive[j] += g[j];
                }
            }
            for j in 0..3 {
                assert!(
                    (naive[j] / p.n() as f64 - full[j]).abs() < 1e-12,
                    "coordinate {j} disagrees"
                );
            }
        }
    }

    #[test]
    fn generator_hits_condition_number_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &(n, d, kappa) in &[
            (2usize, 1usize, 1.0f64),
            (16, 1, 2.0),
            (16, 1, 10.0),
            (8, 2, 5.0),
            (8, 4, 1.5),
            (50, 3, 100.0),
            (5, 10, 30.0),
            (1, 4, 1.0),
        ] {
            let p = make_quadratic(n, d, kappa, &mut rng).unwrap();
            let realized = p.constants().kappa().unwrap();
            assert!(
                (realized - kappa).abs() <= 0.01 * kappa,
                "n={n} d={d}: realized {realized} vs target {kappa}"
            );
            // The optimum certificate: full gradient vanishes there.
            let w_star = p.constants().w_star.clone().unwrap();
            assert!(p.grad_full(&w_star).unwrap().norm() < 1e-8);
            // Stored noise matches a direct evaluation at the optimum.
            let direct: f64 = (0..n)
                .map(|i| p.grad_sample(&w_star, SampleId::new(i as u64)).norm_sq())
                .sum::<f64>()
                / n as f64;
            assert!((direct - p.constants().sigma_star_sq.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_rejects_bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(make_quadratic(4, 1, 0.5, &mut rng).is_err());
        assert!(make_quadratic(4, 1, 10.0, &mut rng).is_err()); // kappa >= n with d = 1
        assert!(make_quadratic(0, 1, 1.0, &mut rng).is_err());
        assert!(make_quadratic(4, 2, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn per_sample_smoothness_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = make_quadratic(20, 3, 25.0, &mut rng).unwrap();
        let l = p.constants().lipschitz;
        let mut check_rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..1000 {
            let w = WeightVector::new((0..3).map(|_| check_rng.random_range(-5.0..5.0)).collect());
            let v = WeightVector::new((0..3).map(|_| check_rng.random_range(-5.0..5.0)).collect());
            let xi = SampleId::new(check_rng.random_range(0..20));
            let lhs = (&p.grad_sample(&w, xi) - &p.grad_sample(&v, xi)).norm();
            let rhs = l * (&w - &v).norm();
            assert!(lhs <= rhs * (1.0 + 1e-12), "smoothness violated: {lhs} > {rhs}");
        }
    }

    #[test]
    fn strong_convexity_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = make_quadratic(12, 2, 8.0, &mut rng).unwrap();
        let mu = p.constants().mu.unwrap();
        let f_star = p.constants().f_star.unwrap();
        for w in grid_w(2, 23) {
            let f = p.value_full(&w).unwrap();
            let g = p.grad_full(&w).unwrap();
            // 2 mu (F(w) - F*) <= ||grad F(w)||^2 for strongly convex F.
            assert!(2.0 * mu * (f - f_star) <= g.norm_sq() * (1.0 + 1e-10) + 1e-12);
        }
    }
}
