//! One-dimensional logistic loss with a one-sided quadratic guard.
//!
//! F(w) = log(1 + exp(-w)) for w >= -2, plus (lambda/2)(w + 2)^2 below -2.
//! The function is C^1 (value and slope agree at w = -2), convex, bounded
//! below by 0, and has no finite minimizer: F decays to 0 as w grows. Its
//! point is to exercise the growth-bound schedule: F(w) - F* stays below
//! M ||F'(w)||^2 + N with M = 1/(2 lambda) and N = log(1 + e^2), a certified
//! (not tightest) pair. As a degenerate finite sum with one component it has
//! zero gradient noise.

use crate::oracle::{uniform_component, ProblemConstants, SampleId, StochasticOracle};
use crate::problems::ProblemError;
use crate::vector::WeightVector;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct ModifiedLogistic1D {
    lambda: f64,
    constants: ProblemConstants,
}

impl ModifiedLogistic1D {
    pub fn new(lambda: f64) -> Result<Self, ProblemError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ProblemError::InvalidArgument(format!(
                "guard strength must be positive and finite, got {lambda}"
            )));
        }
        let mut constants = ProblemConstants::new(0.25 + lambda);
        constants.n_components = Some(1);
        constants.f_star = Some(0.0);
        constants.sigma_star_sq = Some(0.0);
        constants.growth_m = Some(1.0 / (2.0 * lambda));
        constants.growth_n = Some((2.0f64).exp().ln_1p());
        Ok(ModifiedLogistic1D { lambda, constants })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl StochasticOracle for ModifiedLogistic1D {
    fn dim(&self) -> usize {
        1
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> SampleId {
        uniform_component(1, rng)
    }

    fn value_sample(&self, w: &WeightVector, _xi: SampleId) -> f64 {
        let w = w[0];
        // log(1 + exp(-w)) computed without overflow.
        let logistic = if w < 0.0 { -w + w.exp().ln_1p() } else { (-w).exp().ln_1p() };
        let guard = if w < -2.0 {
            let excess = w + 2.0;
            0.5 * self.lambda * excess * excess
        } else {
            0.0
        };
        logistic + guard
    }

    fn grad_sample(&self, w: &WeightVector, _xi: SampleId) -> WeightVector {
        let w = w[0];
        // d/dw log(1 + exp(-w)) = -1 / (1 + exp(w)).
        let logistic = if w > 0.0 {
            let e = (-w).exp();
            -e / (1.0 + e)
        } else {
            -1.0 / (1.0 + w.exp())
        };
        let guard = if w < -2.0 { self.lambda * (w + 2.0) } else { 0.0 };
        WeightVector::new(vec![logistic + guard])
    }
}
