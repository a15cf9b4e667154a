//! Inverse inference: posterior over true changes given forecasts and fitted
//! parameters.
//!
//! The conditional posterior of one quantity's change given the instruments'
//! group assignments is a closed-form normal (precision-weighted combination
//! of debiased readings plus the weak prior). The sampler alternates between
//! redrawing every instrument's group from its membership distribution and
//! redrawing every quantity's change from that conditional, updating the
//! sign branch from the freshly drawn change.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lvbc::LvbcParameters;
use crate::panel::ForecastPanel;

/// Closed-form conditional posterior of one quantity's change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalPosterior {
    pub mean: f64,
    pub variance: f64,
}

/// Posterior of a change given readings with known group assignments.
/// `readings` pairs each forecast with its instrument's group index;
/// `positive` selects the sign branch of the calibration parameters.
pub fn conditional_posterior(
    readings: &[(f64, usize)],
    params: &LvbcParameters,
    positive: bool,
    lambda0: f64,
) -> Result<ConditionalPosterior> {
    if readings.is_empty() {
        return Err(Error::InvalidInput("conditional posterior needs at least one reading".into()));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "prior precision lambda0 must be positive, got {lambda0}"
        )));
    }
    let mut precision = lambda0;
    let mut weighted = 0.0;
    for &(forecast, group) in readings {
        if group >= params.num_groups() {
            return Err(Error::InvalidInput(format!(
                "group index {group} out of range for {} groups",
                params.num_groups()
            )));
        }
        let alpha = params.alpha(group, positive);
        let beta = params.beta(group, positive);
        let sigma = params.sigma(group);
        let inv_var = 1.0 / (sigma * sigma);
        precision += alpha * alpha * inv_var;
        weighted += alpha * (forecast - beta) * inv_var;
    }
    let variance = 1.0 / precision;
    Ok(ConditionalPosterior { mean: variance * weighted, variance })
}

/// Sampler budget and credible-interval level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainBudget {
    /// Total iterations.
    pub num_samples: usize,
    /// Leading iterations discarded from the outputs.
    pub burn_in: usize,
    /// Central credible-interval mass.
    pub credible_level: f64,
}

impl Default for ChainBudget {
    fn default() -> Self {
        Self { num_samples: 1000, burn_in: 100, credible_level: 0.95 }
    }
}

impl ChainBudget {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples <= self.burn_in {
            return Err(Error::InvalidInput(format!(
                "num_samples ({}) must exceed burn_in ({})",
                self.num_samples, self.burn_in
            )));
        }
        if !(self.credible_level > 0.0 && self.credible_level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "credible level must lie in (0, 1), got {}",
                self.credible_level
            )));
        }
        Ok(())
    }
}

/// Retained chain of one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// Post-burn-in draws, in iteration order.
    pub samples: Vec<f64>,
    /// Mean of the retained draws.
    pub point_estimate: f64,
    /// Central credible interval at the configured level.
    pub credible_interval: (f64, f64),
}

/// Full sampler output: one chain per quantity that had readings, plus the
/// ids of quantities excluded because they had none.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsRun {
    pub chains: BTreeMap<String, ChainOutput>,
    pub excluded: Vec<String>,
}

/// Run the sampler over a test panel. Changes start at the per-quantity
/// uniform consensus; each iteration redraws all group assignments from the
/// membership distributions, then each change from its conditional posterior
/// (using the previous iteration's sign branch), then refreshes the sign
/// branch. Deterministic given `seed`.
pub fn gibbs_run(
    panel: &ForecastPanel,
    params: &LvbcParameters,
    lambda0: f64,
    budget: &ChainBudget,
    seed: u64,
) -> Result<GibbsRun> {
    budget.validate()?;
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "prior precision lambda0 must be positive, got {lambda0}"
        )));
    }
    let instrument_map = params.map_panel_instruments(panel)?;

    // Active quantities have at least one reading; the rest are reported.
    let mut active = Vec::new();
    let mut excluded = Vec::new();
    for q in 0..panel.num_quantities() {
        if panel.entries_for(q).is_empty() {
            excluded.push(panel.quantity_id(q).to_string());
        } else {
            active.push(q);
        }
    }

    let num_groups = params.num_groups();
    let memberships: Vec<Vec<f64>> =
        (0..params.num_instruments()).map(|j| params.membership(j)).collect();
    let inv_var: Vec<f64> = (0..num_groups)
        .map(|k| {
            let s = params.sigma(k);
            1.0 / (s * s)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = vec![0usize; params.num_instruments()];
    let mut current: Vec<f64> = active
        .iter()
        .map(|&q| {
            let entries = panel.entries_for(q);
            entries.iter().map(|e| e.forecast).sum::<f64>() / entries.len() as f64
        })
        .collect();
    let mut positive: Vec<bool> = current.iter().map(|&x| x > 0.0).collect();
    let mut retained: Vec<Vec<f64>> =
        vec![Vec::with_capacity(budget.num_samples - budget.burn_in); active.len()];

    for iteration in 1..=budget.num_samples {
        // Redraw every instrument's group from its membership distribution.
        for (j, membership) in memberships.iter().enumerate() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = num_groups - 1;
            for (k, &w) in membership.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = k;
                    break;
                }
            }
            groups[j] = chosen;
        }

        for (slot, &q) in active.iter().enumerate() {
            let branch = positive[slot];
            let mut precision = lambda0;
            let mut weighted = 0.0;
            for entry in panel.entries_for(q) {
                let k = groups[instrument_map[entry.instrument]];
                let alpha = params.alpha(k, branch);
                let beta = params.beta(k, branch);
                precision += alpha * alpha * inv_var[k];
                weighted += alpha * (entry.forecast - beta) * inv_var[k];
            }
            let variance = 1.0 / precision;
            let noise: f64 = rng.sample(StandardNormal);
            let draw = variance * weighted + variance.sqrt() * noise;
            current[slot] = draw;
            positive[slot] = draw > 0.0;
            if iteration > budget.burn_in {
                retained[slot].push(draw);
            }
        }
    }

    let mut chains = BTreeMap::new();
    for (slot, &q) in active.iter().enumerate() {
        let samples = std::mem::take(&mut retained[slot]);
        let point_estimate = samples.iter().sum::<f64>() / samples.len() as f64;
        let tail = (1.0 - budget.credible_level) / 2.0;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let credible_interval = (quantile(&sorted, tail), quantile(&sorted, 1.0 - tail));
        chains.insert(
            panel.quantity_id(q).to_string(),
            ChainOutput { samples, point_estimate, credible_interval },
        );
    }
    Ok(GibbsRun { chains, excluded })
}

/// Posterior-mean consensus estimate per quantity.
pub fn infer_point_estimates(
    panel: &ForecastPanel,
    params: &LvbcParameters,
    lambda0: f64,
    budget: &ChainBudget,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let run = gibbs_run(panel, params, lambda0, budget, seed)?;
    Ok(run.chains.into_iter().map(|(qid, chain)| (qid, chain.point_estimate)).collect())
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
