//! L2-regularized binary logistic regression.
//!
//! Component i is f_i(w) = log(1 + exp(-y_i x_i'w)) + (lambda/2) ||w||^2 with
//! y_i in {-1, +1}. Per-sample gradients are Lipschitz with
//! L = max_i ||x_i||^2 / 4 + lambda. The optimum has no closed form; it is
//! solved once by full-gradient descent and can be cached in a sidecar file so
//! repeated runs on the same dataset skip the solve.

use crate::oracle::{uniform_component, ProblemConstants, SampleId, StochasticOracle};
use crate::problems::ProblemError;
use crate::vector::WeightVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct LogisticProblem {
    features: Vec<WeightVector>,
    labels: Vec<f64>,
    l2: f64,
    constants: ProblemConstants,
}

/// log(1 + exp(z)) without overflow for large |z|.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// 1 / (1 + exp(z)), the sigmoid of -z, stable for large |z|.
fn sigmoid_neg(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

impl LogisticProblem {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, l2: f64) -> Result<Self, ProblemError> {
        let n = features.len();
        if n == 0 {
            return Err(ProblemError::Data("dataset has no rows".into()));
        }
        if labels.len() != n {
            return Err(ProblemError::InvalidArgument(format!(
                "{} feature rows but {} labels",
                n,
                labels.len()
            )));
        }
        if !(l2.is_finite() && l2 >= 0.0) {
            return Err(ProblemError::InvalidArgument(format!(
                "l2 strength must be non-negative and finite, got {l2}"
            )));
        }
        let d = features[0].len();
        if d == 0 {
            return Err(ProblemError::Data("feature rows are empty".into()));
        }
        for (i, x) in features.iter().enumerate() {
            if x.len() != d {
                return Err(ProblemError::InvalidArgument(format!(
                    "row {i} has dimension {} but row 0 has {d}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(ProblemError::Data(format!("row {i} has a non-finite feature")));
            }
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(ProblemError::Data("labels must be -1 or +1".into()));
        }

        let max_x_sq = features
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0f64, f64::max);
        if max_x_sq == 0.0 && l2 == 0.0 {
            return Err(ProblemError::Data(
                "all feature rows are zero and there is no regularizer; the objective is constant"
                    .into(),
            ));
        }

        let mut constants = ProblemConstants::new(max_x_sq / 4.0 + l2);
        constants.n_components = Some(n);
        if l2 > 0.0 {
            constants.mu = Some(l2);
            constants.growth_m = Some(1.0 / (2.0 * l2));
            constants.growth_n = Some(0.0);
        }

        Ok(LogisticProblem {
            features: features.into_iter().map(WeightVector::new).collect(),
            labels,
            l2,
            constants,
        })
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    /// Margin y_i x_i'w of one sample.
    fn margin(&self, w: &WeightVector, i: usize) -> f64 {
        self.labels[i] * self.features[i].dot(w)
    }

    /// Solves for the optimum by full-gradient descent and fills in w_star,
    /// f_star and sigma_star_sq. The step size 1/(mean ||x||^2/4 + lambda)
    /// matches the smoothness of the average objective, which is tighter than
    /// the per-sample constant.
    pub fn solve_optimum(&mut self, grad_tol: f64, max_iters: usize) -> Result<(), ProblemError> {
        if !(grad_tol.is_finite() && grad_tol > 0.0) {
            return Err(ProblemError::InvalidArgument(format!(
                "gradient tolerance must be positive, got {grad_tol}"
            )));
        }
        let mean_x_sq = self
            .features
            .iter()
            .map(|x| x.norm_sq())
            .sum::<f64>()
            / self.n() as f64;
        let step = 1.0 / (mean_x_sq / 4.0 + self.l2);

        let mut w = WeightVector::zeros(self.dim());
        let mut g = self.grad_full(&w).expect("finite sum");
        let mut iters = 0usize;
        while g.norm() > grad_tol {
            if iters >= max_iters {
                return Err(ProblemError::NoConvergence {
                    achieved: g.norm(),
                    target: grad_tol,
                    iterations: iters,
                });
            }
            w.axpy(-step, &g);
            g = self.grad_full(&w).expect("finite sum");
            iters += 1;
        }

        let f_star = self.value_full(&w).expect("finite sum");
        let sigma_star_sq = (0..self.n())
            .map(|i| self.grad_sample(&w, SampleId::new(i as u64)).norm_sq())
            .sum::<f64>()
            / self.n() as f64;
        self.constants.f_star = Some(f_star);
        self.constants.sigma_star_sq = Some(sigma_star_sq);
        self.constants.w_star = Some(w);
        Ok(())
    }

    /// Writes the solved optimum to a TOML sidecar next to the dataset.
    pub fn write_constants_sidecar(&self, path: impl AsRef<Path>) -> Result<(), ProblemError> {
        let path = path.as_ref();
        let sidecar = ConstantsSidecar {
            w_star: self
                .constants
                .w_star
                .as_ref()
                .ok_or_else(|| {
                    ProblemError::InvalidArgument(
                        "optimum not solved yet; call solve_optimum first".into(),
                    )
                })?
                .as_slice()
                .to_vec(),
            f_star: self.constants.f_star.unwrap(),
            sigma_star_sq: self.constants.sigma_star_sq.unwrap(),
        };
        let text = toml::to_string(&sidecar)
            .map_err(|e| ProblemError::Data(format!("sidecar serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|source| ProblemError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Loads cached optimum constants, validating the dimension and that the
    /// cached point is actually stationary for this dataset.
    pub fn load_constants_sidecar(&mut self, path: impl AsRef<Path>) -> Result<(), ProblemError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let sidecar: ConstantsSidecar = toml::from_str(&text).map_err(|e| {
            ProblemError::Data(format!("sidecar {} does not parse: {e}", path.display()))
        })?;
        if sidecar.w_star.len() != self.dim() {
            return Err(ProblemError::Data(format!(
                "sidecar {} has dimension {} but the dataset has {}",
                path.display(),
                sidecar.w_star.len(),
                self.dim()
            )));
        }
        let w = WeightVector::new(sidecar.w_star.clone());
        let residual = self.grad_full(&w).expect("finite sum").norm();
        if residual > 1e-6 {
            return Err(ProblemError::Data(format!(
                "sidecar {} optimum is stale: gradient norm {residual:e} at the cached point",
                path.display()
            )));
        }
        self.constants.w_star = Some(w);
        self.constants.f_star = Some(sidecar.f_star);
        self.constants.sigma_star_sq = Some(sidecar.sigma_star_sq);
        Ok(())
    }
}

/// Cached optimum facts for a dataset, stored as TOML next to the data file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ConstantsSidecar {
    pub w_star: Vec<f64>,
    pub f_star: f64,
    pub sigma_star_sq: f64,
}

impl StochasticOracle for LogisticProblem {
    fn dim(&self) -> usize {
        self.features[0].dim()
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> SampleId {
        uniform_component(self.n(), rng)
    }

    fn value_sample(&self, w: &WeightVector, xi: SampleId) -> f64 {
        let i = xi.index();
        softplus(-self.margin(w, i)) + 0.5 * self.l2 * w.norm_sq()
    }

    fn grad_sample(&self, w: &WeightVector, xi: SampleId) -> WeightVector {
        let i = xi.index();
        let coeff = -self.labels[i] * sigmoid_neg(self.margin(w, i));
        let x = &self.features[i];
        WeightVector::new((0..w.dim()).map(|j| coeff * x[j] + self.l2 * w[j]).collect())
    }
}

/// Reads a sparse-text classification dataset: one sample per line,
/// `label index:value index:value ...` with 1-based feature indices. Labels
/// must form a binary set; {0, 1} is mapped to {-1, +1}, and {-1, +1} (or the
/// {1, 2} convention of some copies) is accepted directly. Blank lines are
/// skipped. The dimension is the largest index seen.
pub fn load_libsvm(path: impl AsRef<Path>, l2: f64) -> Result<LogisticProblem, ProblemError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let display = path.display().to_string();

    let mut raw_labels: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| ProblemError::Io {
            path: display.clone(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a first token");
        let label: f64 = label_tok.parse().map_err(|_| ProblemError::Parse {
            path: display.clone(),
            line: lineno,
            msg: format!("label '{label_tok}' is not a number"),
        })?;
        if !label.is_finite() {
            return Err(ProblemError::Parse {
                path: display.clone(),
                line: lineno,
                msg: format!("label '{label_tok}' is not finite"),
            });
        }

        let mut row = Vec::new();
        for tok in tokens {
            let (idx_str, val_str) = tok.split_once(':').ok_or_else(|| ProblemError::Parse {
                path: display.clone(),
                line: lineno,
                msg: format!("feature '{tok}' is not index:value"),
            })?;
            let idx: usize = idx_str.parse().map_err(|_| ProblemError::Parse {
                path: display.clone(),
                line: lineno,
                msg: format!("feature index '{idx_str}' is not an integer"),
            })?;
            if idx == 0 {
                return Err(ProblemError::Parse {
                    path: display.clone(),
                    line: lineno,
                    msg: "feature indices are 1-based; found index 0".into(),
                });
            }
            let val: f64 = val_str.parse().map_err(|_| ProblemError::Parse {
                path: display.clone(),
                line: lineno,
                msg: format!("feature value '{val_str}' is not a number"),
            })?;
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        raw_labels.push(label);
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(ProblemError::Data(format!("{display}: dataset has no rows")));
    }
    if max_index == 0 {
        return Err(ProblemError::Data(format!("{display}: no features in any row")));
    }

    let mut distinct: Vec<f64> = raw_labels.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("labels are finite"));
    distinct.dedup();
    let labels: Vec<f64> = if distinct == [-1.0] || distinct == [1.0] || distinct == [-1.0, 1.0] {
        raw_labels
    } else if distinct == [0.0] || distinct == [0.0, 1.0] {
        raw_labels.iter().map(|&y| if y == 0.0 { -1.0 } else { 1.0 }).collect()
    } else if distinct == [1.0, 2.0] {
        raw_labels.iter().map(|&y| if y == 2.0 { -1.0 } else { 1.0 }).collect()
    } else {
        return Err(ProblemError::Data(format!(
            "{display}: labels {distinct:?} do not form a supported binary set"
        )));
    };

    let features: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|row| {
            let mut dense = vec![0.0f64; max_index];
            for (j, v) in row {
                dense[j] = v;
            }
            dense
        })
        .collect();

    LogisticProblem::new(features, labels, l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_point_dataset_constants() {
        let f = write_temp("+1 1:2.0\n-1 1:-2.0\n");
        let p = load_libsvm(f.path(), 0.0).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.dim(), 1);
        // max ||x||^2 / 4 = 4/4 = 1.
        assert_eq!(p.constants().lipschitz, 1.0);
        assert_eq!(p.constants().mu, None);
    }

    #[test]
    fn regularizer_adds_to_smoothness_and_gives_mu() {
        let f = write_temp("+1 1:2.0\n-1 1:-2.0\n");
        let p = load_libsvm(f.path(), 0.01).unwrap();
        assert!((p.constants().lipschitz - 1.01).abs() < 1e-15);
        assert_eq!(p.constants().mu, Some(0.01));
    }

    #[test]
    fn zero_one_labels_are_mapped() {
        let f = write_temp("1 1:1.0\n0 1:-1.0\n0 2:0.5\n");
        let p = load_libsvm(f.path(), 0.0).unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(p.n(), 3);
        // Mapped labels enter the gradient as -1/+1.
        let w = WeightVector::zeros(2);
        let g = p.grad_sample(&w, SampleId::new(1));
        // y = -1, x = (-1, 0), sigmoid(0) = 1/2: grad = -y * 1/2 * x = (-0.5, 0).
        assert_eq!(g.as_slice(), &[-0.5, 0.0]);
    }

    #[test]
    fn bad_inputs_are_rejected_with_line_numbers() {
        let f = write_temp("+1 1:2.0\noops 1:1.0\n");
        match load_libsvm(f.path(), 0.0) {
            Err(ProblemError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let f = write_temp("+1 0:2.0\n");
        assert!(matches!(load_libsvm(f.path(), 0.0), Err(ProblemError::Parse { line: 1, .. })));

        let f = write_temp("");
        assert!(matches!(load_libsvm(f.path(), 0.0), Err(ProblemError::Data(_))));

        let f = write_temp("3 1:1.0\n-1 1:2.0\n7 1:0.5\n");
        assert!(matches!(load_libsvm(f.path(), 0.0), Err(ProblemError::Data(_))));
    }

    #[test]
    fn gradient_at_zero_is_half_negative_label_feature() {
        // At w = 0 the sigmoid factor is 1/2, so grad = -y x / 2 + 0.
        let p = LogisticProblem::new(
            vec![vec![1.0, -2.0], vec![0.5, 0.0]],
            vec![1.0, -1.0],
            0.0,
        )
        .unwrap();
        let w = WeightVector::zeros(2);
        assert_eq!(p.grad_sample(&w, SampleId::new(0)).as_slice(), &[-0.5, 1.0]);
        assert_eq!(p.grad_sample(&w, SampleId::new(1)).as_slice(), &[0.25, 0.0]);
        // Value at w = 0 is softplus(0) = ln 2.
        assert!((p.value_sample(&w, SampleId::new(0)) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(-800.0), 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(sigmoid_neg(800.0) >= 0.0 && sigmoid_neg(800.0) < 1e-300);
        assert!((sigmoid_neg(-800.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn solve_and_sidecar_round_trip() {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(77);
        use rand::Rng;
        let features: Vec<Vec<f64>> =
            (0..20).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<f64> =
            (0..20).map(|i| if features[i][0] + 0.3 > 0.0 { 1.0 } else { -1.0 }).collect();
        let mut p = LogisticProblem::new(features.clone(), labels.clone(), 0.1).unwrap();
        p.solve_optimum(1e-10, 100_000).unwrap();

        let w_star = p.constants().w_star.clone().unwrap();
        assert!(p.grad_full(&w_star).unwrap().norm() <= 1e-10);
        let direct_sigma: f64 = (0..20)
            .map(|i| p.grad_sample(&w_star, SampleId::new(i)).norm_sq())
            .sum::<f64>()
            / 20.0;
        assert!((direct_sigma - p.constants().sigma_star_sq.unwrap()).abs() < 1e-14);

        let dir = tempfile::tempdir().unwrap();
        let sidecar = dir.path().join("data.constants.toml");
        p.write_constants_sidecar(&sidecar).unwrap();

        let mut q = LogisticProblem::new(features, labels, 0.1).unwrap();
        q.load_constants_sidecar(&sidecar).unwrap();
        assert_eq!(q.constants().f_star, p.constants().f_star);
        assert_eq!(q.constants().w_star, p.constants().w_star);

        // A sidecar from a different dataset is rejected as stale.
        let mut other = LogisticProblem::new(
            vec![vec![5.0, 0.0, 0.0], vec![-5.0, 1.0, 0.0]],
            vec![1.0, -1.0],
            0.1,
        )
        .unwrap();
        assert!(other.load_constants_sidecar(&sidecar).is_err());
    }
}
