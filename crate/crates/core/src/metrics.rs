//! Scoring of consensus estimates: RMSE, MAE and R-squared, pooled (micro)
//! and per-group averaged (macro), with bootstrap confidence intervals.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_stream_seed;

const SALT_BOOTSTRAP: u64 = 0x4254_5350; // "BTSP"

/// Pooled metrics over all (prediction, actual) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroScores {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
}

/// Unweighted mean of per-group metrics. R-squared is not defined per group
/// here (groups can have constant actuals), so macro scores carry RMSE and
/// MAE only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub rmse: f64,
    pub mae: f64,
}

/// Raw metric values from [`score`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub micro: MicroScores,
    pub macro_scores: Option<MacroScores>,
}

/// Point value with a bootstrap confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCi {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Metrics with bootstrap confidence intervals; macro entries are present
/// only when groups were supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_rmse: MetricCi,
    pub micro_mae: MetricCi,
    pub micro_r2: MetricCi,
    pub macro_rmse: Option<MetricCi>,
    pub macro_mae: Option<MetricCi>,
    pub n_bootstrap: usize,
    pub ci_level: f64,
}

fn paired_errors(
    predictions: &BTreeMap<String, f64>,
    actuals: &BTreeMap<String, f64>,
) -> Result<Vec<(String, f64, f64)>> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    if predictions.len() != actuals.len()
        || !predictions.keys().all(|k| actuals.contains_key(k))
    {
        return Err(Error::InvalidInput(
            "prediction and actual key sets differ".into(),
        ));
    }
    Ok(predictions
        .iter()
        .map(|(k, &p)| (k.clone(), p, actuals[k]))
        .collect())
}

fn micro_from_pairs(pairs: &[(f64, f64)]) -> Result<MicroScores> {
    let n = pairs.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut mean_actual = 0.0;
    for &(p, a) in pairs {
        let err = p - a;
        sq += err * err;
        abs += err.abs();
        mean_actual += a;
    }
    mean_actual /= n;
    let ss_tot: f64 = pairs.iter().map(|&(_, a)| (a - mean_actual) * (a - mean_actual)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric(
            "R^2 is undefined when the actuals are constant".into(),
        ));
    }
    Ok(MicroScores { rmse: (sq / n).sqrt(), mae: abs / n, r2: 1.0 - sq / ss_tot })
}

fn rmse_mae(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for &(p, a) in pairs {
        let err = p - a;
        sq += err * err;
        abs += err.abs();
    }
    ((sq / n).sqrt(), abs / n)
}

fn macro_from_groups(grouped: &BTreeMap<String, Vec<(f64, f64)>>) -> MacroScores {
    let mut rmse = 0.0;
    let mut mae = 0.0;
    for pairs in grouped.values() {
        let (r, m) = rmse_mae(pairs);
        rmse += r;
        mae += m;
    }
    let g = grouped.len() as f64;
    MacroScores { rmse: rmse / g, mae: mae / g }
}

fn group_pairs(
    pairs: &[(String, f64, f64)],
    groups: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let mut grouped: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (key, p, a) in pairs {
        let group = groups.get(key).ok_or_else(|| {
            Error::InvalidInput(format!("quantity `{key}` has no group assignment"))
        })?;
        grouped.entry(group.clone()).or_default().push((*p, *a));
    }
    Ok(grouped)
}

/// Score predictions against actuals. Key sets must match exactly. Macro
/// averaging is computed when `groups` maps every quantity to a group id.
pub fn score(
    predictions: &BTreeMap<String, f64>,
    actuals: &BTreeMap<String, f64>,
    groups: Option<&BTreeMap<String, String>>,
) -> Result<Scores> {
    let keyed = paired_errors(predictions, actuals)?;
    let pairs: Vec<(f64, f64)> = keyed.iter().map(|&(_, p, a)| (p, a)).collect();
    let micro = micro_from_pairs(&pairs)?;
    let macro_scores = match groups {
        Some(groups) => Some(macro_from_groups(&group_pairs(&keyed, groups)?)),
        None => None,
    };
    Ok(Scores { micro, macro_scores })
}

/// Metric values of one bootstrap replicate. A resample with constant
/// actuals leaves R^2 undefined for that replicate only; it still counts
/// toward the RMSE/MAE intervals.
struct ReplicateScores {
    rmse: f64,
    mae: f64,
    r2: Option<f64>,
    macro_scores: Option<MacroScores>,
}

/// Bootstrap the scores: pairs are resampled with replacement (within each
/// group independently for the macro metrics), confidence intervals are
/// empirical quantiles of the replicate metrics, and point values equal the
/// non-bootstrapped [`score`]. Deterministic given `seed`.
pub fn bootstrap_report(
    predictions: &BTreeMap<String, f64>,
    actuals: &BTreeMap<String, f64>,
    groups: Option<&BTreeMap<String, String>>,
    n_bootstrap: usize,
    ci_level: f64,
    seed: u64,
) -> Result<EvalReport> {
    if n_bootstrap < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 bootstrap replicates, got {n_bootstrap}"
        )));
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "ci_level must lie in (0, 1), got {ci_level}"
        )));
    }
    let point = score(predictions, actuals, groups)?;
    let keyed = paired_errors(predictions, actuals)?;
    let pairs: Vec<(f64, f64)> = keyed.iter().map(|&(_, p, a)| (p, a)).collect();
    let grouped = match groups {
        Some(groups) => Some(group_pairs(&keyed, groups)?),
        None => None,
    };

    let replicates: Vec<ReplicateScores> = (0..n_bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_stream_seed(seed, r as u64, SALT_BOOTSTRAP));
            let resampled: Vec<(f64, f64)> =
                (0..pairs.len()).map(|_| pairs[rng.random_range(0..pairs.len())]).collect();
            let (rmse, mae) = rmse_mae(&resampled);
            let r2 = micro_from_pairs(&resampled).ok().map(|m| m.r2);
            let macro_scores = grouped.as_ref().map(|grouped| {
                let resampled_groups: BTreeMap<String, Vec<(f64, f64)>> = grouped
                    .iter()
                    .map(|(gid, members)| {
                        let draw: Vec<(f64, f64)> = (0..members.len())
                            .map(|_| members[rng.random_range(0..members.len())])
                            .collect();
                        (gid.clone(), draw)
                    })
                    .collect();
                macro_from_groups(&resampled_groups)
            });
            ReplicateScores { rmse, mae, r2, macro_scores }
        })
        .collect();

    let tail = (1.0 - ci_level) / 2.0;
    let ci = |values: Vec<f64>| -> (f64, f64) {
        let mut sorted = values;
        sorted.sort_by(f64::total_cmp);
        (quantile(&sorted, tail), quantile(&sorted, 1.0 - tail))
    };

    let (rmse_lo, rmse_hi) = ci(replicates.iter().map(|r| r.rmse).collect());
    let (mae_lo, mae_hi) = ci(replicates.iter().map(|r| r.mae).collect());
    let defined_r2: Vec<f64> = replicates.iter().filter_map(|r| r.r2).collect();
    let (r2_lo, r2_hi) = if defined_r2.is_empty() {
        (point.micro.r2, point.micro.r2)
    } else {
        ci(defined_r2)
    };
    let macro_cis = point.macro_scores.map(|m| {
        let (lo_r, hi_r) = ci(replicates
            .iter()
            .map(|r| r.macro_scores.expect("macro replicates present").rmse)
            .collect());
        let (lo_m, hi_m) = ci(replicates
            .iter()
            .map(|r| r.macro_scores.expect("macro replicates present").mae)
            .collect());
        (
            MetricCi { point: m.rmse, ci_low: lo_r, ci_high: hi_r },
            MetricCi { point: m.mae, ci_low: lo_m, ci_high: hi_m },
        )
    });

    Ok(EvalReport {
        micro_rmse: MetricCi { point: point.micro.rmse, ci_low: rmse_lo, ci_high: rmse_hi },
        micro_mae: MetricCi { point: point.micro.mae, ci_low: mae_lo, ci_high: mae_hi },
        micro_r2: MetricCi { point: point.micro.r2, ci_low: r2_lo, ci_high: r2_hi },
        macro_rmse: macro_cis.as_ref().map(|(r, _)| *r),
        macro_mae: macro_cis.as_ref().map(|(_, m)| *m),
        n_bootstrap,
        ci_level,
    })
}

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
