//! Synthetic data generation and Monte-Carlo RMSE sweeps.
//!
//! Each realization draws `num_quantities` true values uniformly from
//! [-5, 5), flips an independent Bernoulli(`delta`) coin per
//! (quantity, instrument) pair to decide whether that reading is distorted,
//! and then draws the reading from the matching normal. Sweeps evaluate the
//! closed-form estimators (which receive the true labels and the true
//! miscalibration coefficients) across a grid of instrument counts and
//! report the mean per-realization RMSE with its standard error.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{DEFAULT_LAMBDA0, EstimatorKind, GroupSums};
use crate::seed::derive_stream_seed;

/// Settings for the synthetic generative process and the sweep grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    /// Fraction of bad readings, `n / (m + n)`.
    pub delta: f64,
    /// Miscalibration slope of bad readings.
    pub alpha: f64,
    /// Miscalibration offset of bad readings.
    pub beta: f64,
    /// Noise variance of good readings.
    pub sigma2: f64,
    /// Noise variance of bad readings.
    pub sigma_star2: f64,
    /// Quantities per realization.
    pub num_quantities: usize,
    /// Instrument counts to sweep over.
    pub instrument_counts: Vec<usize>,
    /// Independent realizations per instrument count.
    pub num_realizations: usize,
    /// Master seed; every realization derives its own stream from it.
    pub seed: u64,
}

impl SyntheticConfig {
    /// Validate ranges. The boundary values `delta` in {0, 1} and zero noise
    /// variances are accepted so degenerate worlds can be simulated exactly.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidInput(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        if !(self.sigma2 >= 0.0) || !(self.sigma_star2 >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise variances must be non-negative, got sigma2={}, sigma_star2={}",
                self.sigma2, self.sigma_star2
            )));
        }
        if self.num_quantities == 0 {
            return Err(Error::InvalidInput("num_quantities must be positive".into()));
        }
        if self.num_realizations == 0 {
            return Err(Error::InvalidInput("num_realizations must be positive".into()));
        }
        if self.instrument_counts.is_empty() {
            return Err(Error::InvalidInput("instrument_counts must be non-empty".into()));
        }
        if let Some(&bad) = self.instrument_counts.iter().find(|&&a| a < 2) {
            return Err(Error::InvalidInput(format!(
                "instrument counts must be at least 2, got {bad}"
            )));
        }
        Ok(())
    }
}

/// One draw of the generative process at a fixed instrument count.
///
/// `readings` and `labels` are row-major `num_quantities x instrument_count`;
/// `labels[idx] == true` marks a distorted reading.
#[derive(Debug, Clone)]
pub struct Realization {
    pub truths: Vec<f64>,
    pub readings: Vec<f64>,
    pub labels: Vec<bool>,
    pub num_quantities: usize,
    pub instrument_count: usize,
}

impl Realization {
    pub fn row(&self, quantity: usize) -> (&[f64], &[bool]) {
        let start = quantity * self.instrument_count;
        let end = start + self.instrument_count;
        (&self.readings[start..end], &self.labels[start..end])
    }
}

/// Draw one realization. Deterministic given `stream_seed`.
pub fn generate_realization(
    config: &SyntheticConfig,
    instrument_count: usize,
    stream_seed: u64,
) -> Realization {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let d = config.num_quantities;
    let sigma = config.sigma2.sqrt();
    let sigma_star = config.sigma_star2.sqrt();

    let truths: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut readings = Vec::with_capacity(d * instrument_count);
    let mut labels = Vec::with_capacity(d * instrument_count);
    for &truth in &truths {
        for _ in 0..instrument_count {
            let bad = rng.random::<f64>() < config.delta;
            let noise: f64 = rng.sample(StandardNormal);
            let reading = if bad {
                config.alpha * truth + config.beta + sigma_star * noise
            } else {
                truth + sigma * noise
            };
            labels.push(bad);
            readings.push(reading);
        }
    }
    Realization { truths, readings, labels, num_quantities: d, instrument_count }
}

/// Sweep summary for one (instrument count, estimator) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub instrument_count: usize,
    pub kind: EstimatorKind,
    /// Mean over realizations of the per-realization RMSE.
    pub mean_rmse: f64,
    /// Standard error of that mean.
    pub stderr: f64,
    /// Quantities skipped because no reading was good-labeled (conservative
    /// estimator only).
    pub excluded_quantities: u64,
}

/// Results of [`run_sweep`], one row per (instrument count, estimator).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, instrument_count: usize, kind: EstimatorKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.instrument_count == instrument_count && r.kind == kind)
    }
}

struct RealizationStats {
    rmse: Vec<f64>,
    excluded: u64,
}

/// Run the Monte-Carlo sweep. Oracle estimators receive the realized labels
/// and the true `alpha`, `beta`; the Bayesian estimator uses the default weak
/// prior precision. Realizations execute in parallel on independent derived
/// streams and are aggregated in index order, so the output is identical
/// regardless of scheduling.
pub fn run_sweep(config: &SyntheticConfig, kinds: &[EstimatorKind]) -> Result<SweepResult> {
    config.validate()?;
    if kinds.is_empty() {
        return Err(Error::InvalidInput("no estimator kinds requested".into()));
    }

    let mut rows = Vec::with_capacity(config.instrument_counts.len() * kinds.len());
    for &count in &config.instrument_counts {
        let stats: Vec<RealizationStats> = (0..config.num_realizations)
            .into_par_iter()
            .map(|r| {
                let seed = derive_stream_seed(config.seed, r as u64, count as u64);
                let realization = generate_realization(config, count, seed);
                realization_stats(config, &realization, kinds)
            })
            .collect::<Result<Vec<_>>>()?;

        for (ki, &kind) in kinds.iter().enumerate() {
            let values: Vec<f64> = stats.iter().map(|s| s.rmse[ki]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let stderr = if values.len() > 1 {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (values.len() - 1) as f64;
                (var / values.len() as f64).sqrt()
            } else {
                0.0
            };
            let excluded = match kind {
                EstimatorKind::Conservative => stats.iter().map(|s| s.excluded).sum(),
                _ => 0,
            };
            rows.push(SweepRow {
                instrument_count: count,
                kind,
                mean_rmse: mean,
                stderr,
                excluded_quantities: excluded,
            });
        }
    }
    Ok(SweepResult { rows })
}

fn realization_stats(
    config: &SyntheticConfig,
    realization: &Realization,
    kinds: &[EstimatorKind],
) -> Result<RealizationStats> {
    let mut sq_sum = vec![0.0f64; kinds.len()];
    let mut included = vec![0u64; kinds.len()];
    let mut excluded = 0u64;

    for q in 0..realization.num_quantities {
        let truth = realization.truths[q];
        let (values, labels) = realization.row(q);
        let sums = GroupSums::from_labeled(values, labels);
        for (ki, &kind) in kinds.iter().enumerate() {
            let estimate = match kind {
                EstimatorKind::Naive => sums.naive(),
                EstimatorKind::Conservative => {
                    if sums.count_good == 0 {
                        excluded += 1;
                        continue;
                    }
                    sums.conservative()?
                }
                EstimatorKind::Greedy => sums.greedy(config.alpha, config.beta)?,
                EstimatorKind::Bayesian => {
                    sums.bayesian(config.alpha, config.beta, DEFAULT_LAMBDA0)?
                }
            };
            let err = estimate - truth;
            sq_sum[ki] += err * err;
            included[ki] += 1;
        }
    }

    let mut rmse = Vec::with_capacity(kinds.len());
    for ki in 0..kinds.len() {
        if included[ki] == 0 {
            return Err(Error::DegenerateInput(format!(
                "estimator {} had no evaluable quantities in a realization",
                kinds[ki]
            )));
        }
        rmse.push((sq_sum[ki] / included[ki] as f64).sqrt());
    }
    Ok(RealizationStats { rmse, excluded })
}
