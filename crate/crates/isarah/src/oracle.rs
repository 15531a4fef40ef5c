//! Sampling access to stochastic objectives.
//!
//! An objective is either a finite sum F(w) = (1/n) sum_i f(w; i) or an
//! expectation F(w) = E[f(w; xi)]. Solvers only ever see this trait: they draw
//! sample identifiers i.i.d. with replacement and ask for per-sample values
//! and gradients. Exact full-objective quantities exist only for finite sums
//! and the corresponding calls fail cleanly otherwise.

use crate::vector::WeightVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque identifier of one stochastic sample: a component index for finite
/// sums, a generator seed for expectation-form objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleId(u64);

impl SampleId {
    pub fn new(raw: u64) -> Self {
        SampleId(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Component index for finite sums.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Draws a uniform component index, the sampling rule shared by every
/// finite-sum objective in this crate.
pub fn uniform_component(n: usize, rng: &mut ChaCha8Rng) -> SampleId {
    assert!(n >= 1, "finite sum needs at least one component");
    SampleId(rng.random_range(0..n as u64))
}

/// Known analytic facts about a problem. `lipschitz` is required (every
/// per-sample gradient is Lipschitz with this constant); the rest is present
/// only when the problem actually provides it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Lipschitz constant of every per-sample gradient.
    pub lipschitz: f64,
    /// Strong-convexity modulus of the average objective.
    pub mu: Option<f64>,
    /// Mean squared per-sample gradient norm at the optimum,
    /// E ||grad f(w*; xi)||^2.
    pub sigma_star_sq: Option<f64>,
    /// Growth pair (M, N): F(w) - F* <= M ||grad F(w)||^2 + N for all w.
    pub growth_m: Option<f64>,
    pub growth_n: Option<f64>,
    /// Number of components when the objective is a finite sum.
    pub n_components: Option<usize>,
    /// Optimal value, or a valid lower bound when no minimizer exists.
    pub f_star: Option<f64>,
    pub w_star: Option<WeightVector>,
}

impl ProblemConstants {
    pub fn new(lipschitz: f64) -> Self {
        assert!(
            lipschitz.is_finite() && lipschitz > 0.0,
            "lipschitz constant must be positive and finite"
        );
        ProblemConstants {
            lipschitz,
            mu: None,
            sigma_star_sq: None,
            growth_m: None,
            growth_n: None,
            n_components: None,
            f_star: None,
            w_star: None,
        }
    }

    /// Condition number L / mu, when the strong-convexity modulus is known.
    pub fn kappa(&self) -> Option<f64> {
        self.mu.map(|mu| self.lipschitz / mu)
    }

    /// Cross-field sanity: positivity, finiteness, mu <= L.
    pub fn validate(&self) -> Result<(), ConstantsError> {
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return Err(ConstantsError(format!(
                "lipschitz must be positive and finite, got {}",
                self.lipschitz
            )));
        }
        if let Some(mu) = self.mu {
            if !(mu.is_finite() && mu > 0.0) {
                return Err(ConstantsError(format!("mu must be positive and finite, got {mu}")));
            }
            if mu > self.lipschitz * (1.0 + 1e-12) {
                return Err(ConstantsError(format!(
                    "mu = {mu} exceeds the lipschitz constant {}",
                    self.lipschitz
                )));
            }
        }
        for (name, v) in [
            ("sigma_star_sq", self.sigma_star_sq),
            ("growth_m", self.growth_m),
            ("growth_n", self.growth_n),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(ConstantsError(format!(
                        "{name} must be non-negative and finite, got {v}"
                    )));
                }
            }
        }
        if let Some(n) = self.n_components {
            if n == 0 {
                return Err(ConstantsError("finite sum needs at least one component".into()));
            }
        }
        if let Some(f) = self.f_star {
            if !f.is_finite() {
                return Err(ConstantsError(format!("f_star must be finite, got {f}")));
            }
        }
        if let Some(w) = &self.w_star {
            if !w.is_finite() {
                return Err(ConstantsError("w_star has non-finite coordinates".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
#[error("invalid problem constants: {0}")]
pub struct ConstantsError(pub String);

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("mini-batch size must be at least 1")]
    EmptyBatch,
    #[error("{op} needs a finite sum; this objective is expectation-form")]
    NotFiniteSum { op: &'static str },
}

/// One ChaCha stream per randomness role, all derived from one master seed.
/// Separate streams keep the roles independent: how often one role draws never
/// shifts what another role sees, so e.g. changing the inner loop length m
/// leaves the initial-batch draws untouched.
#[derive(Clone, Debug)]
pub struct RngStreams {
    outer_batch: ChaCha8Rng,
    inner: ChaCha8Rng,
    output_select: ChaCha8Rng,
}

const STREAM_OUTER_BATCH: u64 = 0;
const STREAM_INNER: u64 = 1;
const STREAM_OUTPUT_SELECT: u64 = 2;

impl RngStreams {
    pub fn from_seed(seed: u64) -> Self {
        RngStreams {
            outer_batch: stream(seed, STREAM_OUTER_BATCH),
            inner: stream(seed, STREAM_INNER),
            output_select: stream(seed, STREAM_OUTPUT_SELECT),
        }
    }

    /// Seeds each role separately. Used by diagnostics that pin one role
    /// (e.g. fix the initial batch) while varying another across replications.
    pub fn from_role_seeds(outer_batch: u64, inner: u64, output_select: u64) -> Self {
        RngStreams {
            outer_batch: stream(outer_batch, STREAM_OUTER_BATCH),
            inner: stream(inner, STREAM_INNER),
            output_select: stream(output_select, STREAM_OUTPUT_SELECT),
        }
    }

    /// Draws for the initial (outer) gradient batch.
    pub fn outer_batch(&mut self) -> &mut ChaCha8Rng {
        &mut self.outer_batch
    }

    /// Draws for the per-step inner samples.
    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }

    /// Draws for the returned-iterate index.
    pub fn output_select(&mut self) -> &mut ChaCha8Rng {
        &mut self.output_select
    }
}

fn stream(seed: u64, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role);
    rng
}

/// Sampling interface to a stochastic objective.
pub trait StochasticOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn constants(&self) -> &ProblemConstants;

    /// Draws one sample identifier i.i.d. (with replacement) from the
    /// objective's sampling distribution.
    fn sample(&self, rng: &mut ChaCha8Rng) -> SampleId;

    /// f(w; xi) for one sample.
    fn value_sample(&self, w: &WeightVector, xi: SampleId) -> f64;

    /// grad f(w; xi) for one sample.
    fn grad_sample(&self, w: &WeightVector, xi: SampleId) -> WeightVector;

    fn n_components(&self) -> Option<usize> {
        self.constants().n_components
    }

    /// Exact full gradient of a finite sum, averaged over all components with
    /// a fixed pairwise reduction so the result is bit-stable.
    fn grad_full(&self, w: &WeightVector) -> Result<WeightVector, OracleError> {
        let n = self.n_components().ok_or(OracleError::NotFiniteSum { op: "grad_full" })?;
        let ids: Vec<SampleId> = (0..n as u64).map(SampleId::new).collect();
        let sum = pairwise_grad_sum(self, w, &ids);
        Ok(&sum * (1.0 / n as f64))
    }

    /// Exact full objective value of a finite sum.
    fn value_full(&self, w: &WeightVector) -> Result<f64, OracleError> {
        let n = self.n_components().ok_or(OracleError::NotFiniteSum { op: "value_full" })?;
        let sum = pairwise_value_sum(self, w, 0, n as u64);
        Ok(sum / n as f64)
    }

    /// Mean gradient over a mini-batch of `batch` fresh i.i.d. draws from
    /// `rng`. The draws happen in sequence and the average uses the same
    /// pairwise reduction as `grad_full`, so the result is a deterministic
    /// function of the stream state.
    fn grad_minibatch(
        &self,
        w: &WeightVector,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<WeightVector, OracleError> {
        if batch == 0 {
            return Err(OracleError::EmptyBatch);
        }
        let ids: Vec<SampleId> = (0..batch).map(|_| self.sample(rng)).collect();
        let sum = pairwise_grad_sum(self, w, &ids);
        Ok(&sum * (1.0 / batch as f64))
    }
}

/// Sum of per-sample gradients over `ids`, reduced pairwise (split at the
/// midpoint, recurse) so the floating-point result does not depend on how the
/// caller might otherwise have chunked the accumulation.
pub fn pairwise_grad_sum<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w: &WeightVector,
    ids: &[SampleId],
) -> WeightVector {
    assert!(!ids.is_empty(), "pairwise sum over an empty id list");
    if ids.len() == 1 {
        let g = oracle.grad_sample(w, ids[0]);
        assert_eq!(g.dim(), w.dim(), "oracle returned gradient of wrong dimension");
        return g;
    }
    let mid = ids.len() / 2;
    let left = pairwise_grad_sum(oracle, w, &ids[..mid]);
    let right = pairwise_grad_sum(oracle, w, &ids[mid..]);
    &left + &right
}

fn pairwise_value_sum<O: StochasticOracle + ?Sized>(
    oracle: &O,
    w: &WeightVector,
    lo: u64,
    hi: u64,
) -> f64 {
    debug_assert!(lo < hi);
    if hi - lo == 1 {
        return oracle.value_sample(w, SampleId::new(lo));
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_value_sum(oracle, w, lo, mid) + pairwise_value_sum(oracle, w, mid, hi)
}
