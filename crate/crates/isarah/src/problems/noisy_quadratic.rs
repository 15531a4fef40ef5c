//! Expectation-form quadratic: the sample space is continuous, so there is no
//! finite sum to average and exact full gradients are structurally
//! unavailable through the oracle interface.
//!
//! f(w; xi) = 1/2 sum_j a_j (w_j - xi_j)^2 with xi_j ~ Normal(c_j, s_j^2)
//! independent. The average objective is still closed-form:
//! F(w) = 1/2 sum_j a_j ((w_j - c_j)^2 + s_j^2), so w* = c,
//! F* = 1/2 sum_j a_j s_j^2, and E ||grad f(w*; xi)||^2 = sum_j a_j^2 s_j^2.
//! Those exact quantities are exposed as inherent methods for tests that hold
//! the concrete type.

use crate::oracle::{ProblemConstants, SampleId, StochasticOracle};
use crate::problems::ProblemError;
use crate::vector::WeightVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct NoisyQuadratic {
    curvature: WeightVector,
    center: WeightVector,
    noise_sd: WeightVector,
    constants: ProblemConstants,
}

impl NoisyQuadratic {
    pub fn new(curvature: Vec<f64>, center: Vec<f64>, noise_sd: Vec<f64>) -> Result<Self, ProblemError> {
        let d = curvature.len();
        if d == 0 {
            return Err(ProblemError::InvalidArgument("dimension must be at least 1".into()));
        }
        if center.len() != d || noise_sd.len() != d {
            return Err(ProblemError::InvalidArgument(
                "curvature, center and noise_sd must share a dimension".into(),
            ));
        }
        if curvature.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(ProblemError::InvalidArgument(
                "curvature entries must be positive and finite".into(),
            ));
        }
        if noise_sd.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(ProblemError::InvalidArgument(
                "noise standard deviations must be non-negative and finite".into(),
            ));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(ProblemError::InvalidArgument("center must be finite".into()));
        }

        let lipschitz = curvature.iter().copied().fold(0.0f64, f64::max);
        let mu = curvature.iter().copied().fold(f64::INFINITY, f64::min);
        let f_star =
            0.5 * curvature.iter().zip(noise_sd.iter()).map(|(a, s)| a * s * s).sum::<f64>();
        let sigma_star_sq =
            curvature.iter().zip(noise_sd.iter()).map(|(a, s)| a * a * s * s).sum::<f64>();

        let mut constants = ProblemConstants::new(lipschitz);
        constants.mu = Some(mu);
        constants.sigma_star_sq = Some(sigma_star_sq);
        constants.f_star = Some(f_star);
        constants.w_star = Some(WeightVector::new(center.clone()));
        constants.growth_m = Some(1.0 / (2.0 * mu));
        constants.growth_n = Some(0.0);

        Ok(NoisyQuadratic {
            curvature: WeightVector::new(curvature),
            center: WeightVector::new(center),
            noise_sd: WeightVector::new(noise_sd),
            constants,
        })
    }

    /// The sample realization a given id denotes: xi = center + sd .* z with
    /// z standard normal from a generator seeded by the id.
    fn realize(&self, xi: SampleId) -> WeightVector {
        let mut rng = ChaCha8Rng::seed_from_u64(xi.raw());
        WeightVector::new(
            (0..self.dim())
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    self.center[j] + self.noise_sd[j] * z
                })
                .collect(),
        )
    }

    /// Exact gradient of the average objective (inherent, not part of the
    /// oracle interface: through the trait this problem is expectation-form).
    pub fn exact_mean_grad(&self, w: &WeightVector) -> WeightVector {
        WeightVector::new(
            (0..self.dim()).map(|j| self.curvature[j] * (w[j] - self.center[j])).collect(),
        )
    }

    /// Exact value of the average objective.
    pub fn exact_mean_value(&self, w: &WeightVector) -> f64 {
        0.5 * (0..self.dim())
            .map(|j| {
                let r = w[j] - self.center[j];
                let s = self.noise_sd[j];
                self.curvature[j] * (r * r + s * s)
            })
            .sum::<f64>()
    }
}

impl StochasticOracle for NoisyQuadratic {
    fn dim(&self) -> usize {
        self.curvature.dim()
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> SampleId {
        SampleId::new(rng.next_u64())
    }

    fn value_sample(&self, w: &WeightVector, xi: SampleId) -> f64 {
        let r = self.realize(xi);
        0.5 * (0..self.dim())
            .map(|j| {
                let e = w[j] - r[j];
                self.curvature[j] * e * e
            })
            .sum::<f64>()
    }

    fn grad_sample(&self, w: &WeightVector, xi: SampleId) -> WeightVector {
        let r = self.realize(xi);
        WeightVector::new((0..self.dim()).map(|j| self.curvature[j] * (w[j] - r[j])).collect())
    }
}
