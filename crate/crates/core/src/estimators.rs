//! Closed-form consensus estimators for a single scalar quantity.
//!
//! A quantity is observed through a mix of *good* instruments (unbiased,
//! noise variance `sigma2`) and *bad* instruments (readings affinely
//! distorted to `alpha * x + beta`, noise variance `sigma_star2`). The four
//! estimators differ in how much side information they assume:
//!
//! * naive: uniform average of everything, labels ignored;
//! * conservative: average of the good-labeled readings only;
//! * greedy: invert the affine distortion on the bad readings, then average;
//! * bayesian: posterior mean under a weak normal prior on the quantity,
//!   derived assuming unit noise variance.
//!
//! Alongside the point estimators this module provides their exact bias and
//! variance as closed forms, and the sufficient conditions under which one
//! estimator's MSE dominates another's.

use crate::error::{Error, Result};

/// One quantity's readings, with optional good/bad class labels
/// (`false` = good, `true` = bad).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    values: Vec<f64>,
    class_labels: Option<Vec<bool>>,
}

impl MeasurementBatch {
    /// Unlabeled batch. Errors on an empty value list.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("measurement batch is empty".into()));
        }
        Ok(Self { values, class_labels: None })
    }

    /// Labeled batch; `labels[i] == true` marks `values[i]` as bad.
    pub fn with_labels(values: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("measurement batch is empty".into()));
        }
        if labels.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "label length {} does not match value length {}",
                labels.len(),
                values.len()
            )));
        }
        Ok(Self { values, class_labels: Some(labels) })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn class_labels(&self) -> Option<&[bool]> {
        self.class_labels.as_deref()
    }

    fn labels_or_err(&self) -> Result<&[bool]> {
        self.class_labels
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("batch has no class labels".into()))
    }

    pub(crate) fn sums(&self) -> GroupSums {
        match &self.class_labels {
            Some(labels) => GroupSums::from_labeled(&self.values, labels),
            None => GroupSums::all_good(&self.values),
        }
    }
}

/// Per-class reading sums; all four estimators are cheap functions of these.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct GroupSums {
    pub sum_good: f64,
    pub count_good: usize,
    pub sum_bad: f64,
    pub count_bad: usize,
}

impl GroupSums {
    pub fn from_labeled(values: &[f64], labels: &[bool]) -> Self {
        let mut s = Self::default();
        for (&v, &bad) in values.iter().zip(labels) {
            if bad {
                s.sum_bad += v;
                s.count_bad += 1;
            } else {
                s.sum_good += v;
                s.count_good += 1;
            }
        }
        s
    }

    pub fn all_good(values: &[f64]) -> Self {
        Self {
            sum_good: values.iter().sum(),
            count_good: values.len(),
            sum_bad: 0.0,
            count_bad: 0,
        }
    }

    pub fn naive(&self) -> f64 {
        (self.sum_good + self.sum_bad) / (self.count_good + self.count_bad) as f64
    }

    pub fn conservative(&self) -> Result<f64> {
        if self.count_good == 0 {
            return Err(Error::DegenerateInput(
                "no good-labeled measurements for the conservative estimator".into(),
            ));
        }
        Ok(self.sum_good / self.count_good as f64)
    }

    pub fn greedy(&self, alpha: f64, beta: f64) -> Result<f64> {
        if alpha == 0.0 {
            return Err(Error::SingularCalibration);
        }
        let n = self.count_bad as f64;
        let total = (self.count_good + self.count_bad) as f64;
        Ok((self.sum_good + (self.sum_bad - n * beta) / alpha) / total)
    }

    pub fn bayesian(&self, alpha: f64, beta: f64, lambda0: f64) -> Result<f64> {
        if !(lambda0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "prior precision lambda0 must be positive, got {lambda0}"
            )));
        }
        let m = self.count_good as f64;
        let n = self.count_bad as f64;
        Ok((self.sum_good + alpha * self.sum_bad - n * alpha * beta)
            / (m + n * alpha * alpha + lambda0))
    }
}

/// Default prior precision for "weak prior" behavior of the Bayesian
/// estimator and of inverse inference.
pub const DEFAULT_LAMBDA0: f64 = 1e-4;

/// Uniform average of all readings, labels ignored.
pub fn estimate_naive(batch: &MeasurementBatch) -> f64 {
    batch.sums().naive()
}

/// Average of the good-labeled readings only.
pub fn estimate_conservative(batch: &MeasurementBatch) -> Result<f64> {
    batch.labels_or_err()?;
    batch.sums().conservative()
}

/// Average after inverting the affine distortion on the bad readings:
/// `(sum_good + (sum_bad - n*beta)/alpha) / (m + n)`.
pub fn estimate_greedy(batch: &MeasurementBatch, alpha: f64, beta: f64) -> Result<f64> {
    batch.labels_or_err()?;
    batch.sums().greedy(alpha, beta)
}

/// Posterior mean under a weak normal prior with precision `lambda0`,
/// assuming unit noise variance:
/// `(sum_good + alpha*sum_bad - n*alpha*beta) / (m + n*alpha^2 + lambda0)`.
///
/// Well-defined even when there are no good or no bad readings.
pub fn estimate_bayesian(
    batch: &MeasurementBatch,
    alpha: f64,
    beta: f64,
    lambda0: f64,
) -> Result<f64> {
    batch.labels_or_err()?;
    batch.sums().bayesian(alpha, beta, lambda0)
}

/// Which consensus estimator to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "NE")]
    Naive,
    #[serde(rename = "CE")]
    Conservative,
    #[serde(rename = "GE")]
    Greedy,
    #[serde(rename = "BE")]
    Bayesian,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Naive,
        EstimatorKind::Conservative,
        EstimatorKind::Greedy,
        EstimatorKind::Bayesian,
    ];

    /// Short code used in CSV output and config files.
    pub fn code(&self) -> &'static str {
        match self {
            EstimatorKind::Naive => "NE",
            EstimatorKind::Conservative => "CE",
            EstimatorKind::Greedy => "GE",
            EstimatorKind::Bayesian => "BE",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NE" => Ok(EstimatorKind::Naive),
            "CE" => Ok(EstimatorKind::Conservative),
            "GE" => Ok(EstimatorKind::Greedy),
            "BE" => Ok(EstimatorKind::Bayesian),
            other => Err(Error::InvalidInput(format!("unknown estimator kind `{other}`"))),
        }
    }
}

/// Ground-truth world parameters for the two-class measurement model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthParams {
    /// True quantity.
    pub mu: f64,
    /// Miscalibration slope of the bad instruments.
    pub alpha: f64,
    /// Miscalibration offset of the bad instruments.
    pub beta: f64,
    /// Noise variance of the good instruments.
    pub sigma2: f64,
    /// Noise variance of the bad instruments.
    pub sigma_star2: f64,
    /// Number of good instruments.
    pub m: usize,
    /// Number of bad instruments.
    pub n: usize,
    /// Prior precision used by the Bayesian estimator.
    pub lambda0: f64,
}

impl GroundTruthParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mu: f64,
        alpha: f64,
        beta: f64,
        sigma2: f64,
        sigma_star2: f64,
        m: usize,
        n: usize,
        lambda0: f64,
    ) -> Result<Self> {
        if !(sigma2 > 0.0) || !(sigma_star2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise variances must be positive, got sigma2={sigma2}, sigma_star2={sigma_star2}"
            )));
        }
        if !(lambda0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "prior precision lambda0 must be positive, got {lambda0}"
            )));
        }
        if m + n == 0 {
            return Err(Error::InvalidInput("need at least one instrument".into()));
        }
        Ok(Self { mu, alpha, beta, sigma2, sigma_star2, m, n, lambda0 })
    }
}

/// Exact bias and variance of an estimator under [`GroundTruthParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPair {
    pub bias: f64,
    pub variance: f64,
}

/// Closed-form bias and variance of the chosen estimator.
pub fn analytic_moments(kind: EstimatorKind, params: &GroundTruthParams) -> Result<MomentPair> {
    let m = params.m as f64;
    let n = params.n as f64;
    let total = m + n;
    match kind {
        EstimatorKind::Naive => Ok(MomentPair {
            bias: n / total * ((params.alpha - 1.0) * params.mu + params.beta),
            variance: (m * params.sigma2 + n * params.sigma_star2) / (total * total),
        }),
        EstimatorKind::Conservative => {
            if params.m == 0 {
                return Err(Error::DegenerateInput(
                    "conservative estimator needs at least one good instrument".into(),
                ));
            }
            Ok(MomentPair { bias: 0.0, variance: params.sigma2 / m })
        }
        EstimatorKind::Greedy => {
            if params.alpha == 0.0 {
                return Err(Error::SingularCalibration);
            }
            let a2 = params.alpha * params.alpha;
            Ok(MomentPair {
                bias: 0.0,
                variance: (m * params.sigma2 + n * params.sigma_star2 / a2) / (total * total),
            })
        }
        EstimatorKind::Bayesian => {
            let a2 = params.alpha * params.alpha;
            let denom = m + n * a2 + params.lambda0;
            Ok(MomentPair {
                bias: (m + n * a2) * params.mu / denom - params.mu,
                variance: (m * params.sigma2 + n * a2 * params.sigma_star2) / (denom * denom),
            })
        }
    }
}

/// Which MSE-dominance condition to evaluate. In each pair the first
/// estimator is the candidate dominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DominancePair {
    GreedyVsConservative,
    BayesianVsConservative,
    BayesianVsGreedy,
}

/// Evaluate the sufficient condition under which the first estimator of the
/// pair has MSE no larger than the second.
///
/// `variance_ratio` is `sigma_star2 / sigma2`. For the first two pairs the
/// condition is also necessary (an iff); for Bayesian-vs-greedy it is the
/// sufficient condition `ratio <= 2` together with
/// `|alpha| > sqrt(3/2 + sqrt(9/4 + 2m/n))`. Ties on the non-strict
/// inequalities return `true`.
pub fn dominance_predicate(
    pair: DominancePair,
    m: usize,
    n: usize,
    alpha: f64,
    variance_ratio: f64,
) -> Result<bool> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput(format!(
            "dominance conditions need positive instrument counts, got m={m}, n={n}"
        )));
    }
    if !(variance_ratio > 0.0) {
        return Err(Error::InvalidInput(format!(
            "variance ratio must be positive, got {variance_ratio}"
        )));
    }
    let m = m as f64;
    let n = n as f64;
    let a2 = alpha * alpha;
    Ok(match pair {
        DominancePair::GreedyVsConservative => variance_ratio <= (n / m + 2.0) * a2,
        DominancePair::BayesianVsConservative => variance_ratio <= n / m * a2 + 2.0,
        DominancePair::BayesianVsGreedy => {
            let alpha_threshold = (1.5 + (2.25 + 2.0 * m / n).sqrt()).sqrt();
            variance_ratio <= 2.0 && alpha.abs() > alpha_threshold
        }
    })
}
