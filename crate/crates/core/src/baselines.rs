//! Reference consensus estimators: uniform average, accuracy-weighted
//! average, per-instrument ridge adjustment, and the Bayesian-regression
//! estimator (a single free latent group trained and inverted like the full
//! model).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{ChainBudget, infer_point_estimates};
use crate::lvbc::{FitOutcome, HyperParams, fit_with_pinning};
use crate::panel::ForecastPanel;

/// Versioned format of the serialized baseline models.
pub const BASELINE_FORMAT_VERSION: u32 = 1;

/// MSE floor applied before inverting a perfect history into a weight.
const MSE_FLOOR: f64 = 1e-8;

/// Normalized per-instrument weights (non-negative, summing to one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightVector {
    #[serde(default = "baseline_format_version")]
    pub format_version: u32,
    pub weights: BTreeMap<String, f64>,
    /// Instruments that had no history and received the mean weight.
    pub no_history: Vec<String>,
}

fn baseline_format_version() -> u32 {
    BASELINE_FORMAT_VERSION
}

impl WeightVector {
    pub fn weight(&self, instrument: &str) -> Option<f64> {
        self.weights.get(instrument).copied()
    }
}

/// Weights inversely proportional to each instrument's historical MSE on the
/// training panel. Instruments without history get the mean weight (1/|A|)
/// and are reported in `no_history`; per-instrument MSEs are floored at 1e-8
/// before inversion so a perfect history cannot absorb all the mass.
pub fn fit_weights(panel_train: &ForecastPanel) -> Result<WeightVector> {
    if panel_train.is_empty() {
        return Err(Error::InvalidInput("training panel has no entries".into()));
    }
    panel_train.require_actuals()?;

    let num_instruments = panel_train.num_instruments();
    let mut sq = vec![0.0f64; num_instruments];
    let mut count = vec![0usize; num_instruments];
    for entry in panel_train.entries() {
        let actual = panel_train.actual(entry.quantity).expect("actuals checked above");
        let err = entry.forecast - actual;
        sq[entry.instrument] += err * err;
        count[entry.instrument] += 1;
    }

    let inverse: Vec<Option<f64>> = (0..num_instruments)
        .map(|j| (count[j] > 0).then(|| 1.0 / (sq[j] / count[j] as f64).max(MSE_FLOOR)))
        .collect();
    let with_history: f64 = inverse.iter().flatten().count() as f64;
    let inverse_total: f64 = inverse.iter().flatten().sum();
    if with_history == 0.0 {
        return Err(Error::DegenerateInput("no instrument has any history".into()));
    }

    // Defaulted instruments take exactly the mean weight 1/|A|; the rest
    // share the remaining mass in proportion to inverse MSE.
    let mean_weight = 1.0 / num_instruments as f64;
    let historical_mass = with_history * mean_weight;
    let mut weights = BTreeMap::new();
    let mut no_history = Vec::new();
    for (j, inv) in inverse.iter().enumerate() {
        let id = panel_train.instrument_id(j).to_string();
        match inv {
            Some(inv) => {
                weights.insert(id, historical_mass * inv / inverse_total);
            }
            None => {
                weights.insert(id.clone(), mean_weight);
                no_history.push(id);
            }
        }
    }
    Ok(WeightVector { format_version: BASELINE_FORMAT_VERSION, weights, no_history })
}

/// Weighted consensus over one quantity's readings; the weights of the
/// instruments that are present are renormalized to sum to one.
pub fn estimate_weighted(
    readings: &BTreeMap<String, f64>,
    weights: &WeightVector,
) -> Result<f64> {
    if readings.is_empty() {
        return Err(Error::InvalidInput("no readings to aggregate".into()));
    }
    let mut mass = 0.0;
    let mut total = 0.0;
    for (instrument, &value) in readings {
        let w = weights.weight(instrument).ok_or_else(|| {
            Error::InvalidInput(format!("no weight for instrument `{instrument}`"))
        })?;
        mass += w;
        total += w * value;
    }
    if mass <= 0.0 {
        return Err(Error::DegenerateInput("present-instrument weights sum to zero".into()));
    }
    Ok(total / mass)
}

/// Per-instrument affine adjustment fitted by ridge regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeModel {
    #[serde(default = "baseline_format_version")]
    pub format_version: u32,
    /// instrument id -> (slope, intercept) mapping a forecast to an adjusted
    /// estimate of the actual.
    pub coefficients: BTreeMap<String, (f64, f64)>,
    pub ridge_strength: f64,
    /// Instruments skipped for lack of training pairs.
    pub skipped: Vec<String>,
}

impl RidgeModel {
    /// The identity adjustment (useful as a neutral fallback).
    pub fn identity() -> Self {
        Self {
            format_version: BASELINE_FORMAT_VERSION,
            coefficients: BTreeMap::new(),
            ridge_strength: 0.0,
            skipped: Vec::new(),
        }
    }

    /// Adjusted estimate from one instrument's forecast; instruments the
    /// model does not cover pass through unadjusted.
    pub fn adjust(&self, instrument: &str, forecast: f64) -> f64 {
        match self.coefficients.get(instrument) {
            Some(&(slope, intercept)) => slope * forecast + intercept,
            None => forecast,
        }
    }

    pub fn covers(&self, instrument: &str) -> bool {
        self.coefficients.contains_key(instrument)
    }
}

/// Per instrument, regress the actual on the forecast with an L2 penalty of
/// `ridge_strength` on the deviation from the identity adjustment
/// (slope 1, intercept 0). The penalized normal equations are
///
/// ```text
/// [sum f^2 + r, sum f ] [slope]     [sum f*x + r]
/// [sum f,       n + r ] [intercept] [sum x      ]
/// ```
///
/// A singular system (only possible at `ridge_strength = 0`) is an error.
pub fn fit_ridge(panel_train: &ForecastPanel, ridge_strength: f64) -> Result<RidgeModel> {
    if panel_train.is_empty() {
        return Err(Error::InvalidInput("training panel has no entries".into()));
    }
    if !(ridge_strength >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "ridge strength must be non-negative, got {ridge_strength}"
        )));
    }
    panel_train.require_actuals()?;

    let num_instruments = panel_train.num_instruments();
    let mut stats = vec![[0.0f64; 5]; num_instruments]; // [sum_f, sum_f2, sum_x, sum_fx, n]
    for entry in panel_train.entries() {
        let actual = panel_train.actual(entry.quantity).expect("actuals checked above");
        let s = &mut stats[entry.instrument];
        s[0] += entry.forecast;
        s[1] += entry.forecast * entry.forecast;
        s[2] += actual;
        s[3] += entry.forecast * actual;
        s[4] += 1.0;
    }

    let mut coefficients = BTreeMap::new();
    let mut skipped = Vec::new();
    for (j, stat) in stats.iter().enumerate() {
        let id = panel_train.instrument_id(j).to_string();
        let [sum_f, sum_f2, sum_x, sum_fx, n] = *stat;
        if n < 2.0 {
            skipped.push(id);
            continue;
        }
        let a11 = sum_f2 + ridge_strength;
        let a12 = sum_f;
        let a22 = n + ridge_strength;
        let b1 = sum_fx + ridge_strength;
        let b2 = sum_x;
        let det = a11 * a22 - a12 * a12;
        let scale = a11.abs().max(a22.abs()).max(1.0);
        if det.abs() <= 1e-12 * scale * scale {
            return Err(Error::SingularFit(format!(
                "instrument `{id}` has a singular design and no ridge penalty"
            )));
        }
        let slope = (b1 * a22 - b2 * a12) / det;
        let intercept = (a11 * b2 - a12 * b1) / det;
        coefficients.insert(id, (slope, intercept));
    }
    Ok(RidgeModel {
        format_version: BASELINE_FORMAT_VERSION,
        coefficients,
        ridge_strength,
        skipped,
    })
}

/// Consensus estimate: average of the per-instrument adjusted readings.
pub fn estimate_regression(readings: &BTreeMap<String, f64>, model: &RidgeModel) -> Result<f64> {
    if readings.is_empty() {
        return Err(Error::InvalidInput("no readings to aggregate".into()));
    }
    let total: f64 = readings.iter().map(|(id, &v)| model.adjust(id, v)).sum();
    Ok(total / readings.len() as f64)
}

/// Uniform-consensus estimate per quantity of a panel.
pub fn consensus_naive(panel: &ForecastPanel) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for q in 0..panel.num_quantities() {
        let entries = panel.entries_for(q);
        if entries.is_empty() {
            continue;
        }
        let mean = entries.iter().map(|e| e.forecast).sum::<f64>() / entries.len() as f64;
        out.insert(panel.quantity_id(q).to_string(), mean);
    }
    out
}

/// Weighted-consensus estimates per quantity of a panel.
pub fn predict_weighted(
    panel: &ForecastPanel,
    weights: &WeightVector,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for q in 0..panel.num_quantities() {
        let entries = panel.entries_for(q);
        if entries.is_empty() {
            continue;
        }
        let readings: BTreeMap<String, f64> = entries
            .iter()
            .map(|e| (panel.instrument_id(e.instrument).to_string(), e.forecast))
            .collect();
        out.insert(panel.quantity_id(q).to_string(), estimate_weighted(&readings, weights)?);
    }
    Ok(out)
}

/// Regression-adjusted consensus estimates per quantity of a panel.
pub fn predict_regression(
    panel: &ForecastPanel,
    model: &RidgeModel,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for q in 0..panel.num_quantities() {
        let entries = panel.entries_for(q);
        if entries.is_empty() {
            continue;
        }
        let readings: BTreeMap<String, f64> = entries
            .iter()
            .map(|e| (panel.instrument_id(e.instrument).to_string(), e.forecast))
            .collect();
        out.insert(panel.quantity_id(q).to_string(), estimate_regression(&readings, model)?);
    }
    Ok(out)
}

/// Bayesian-regression estimator: a single *unpinned* latent group fitted by
/// the usual training loop, then posterior-mean inverse inference on the test
/// panel. Equivalent to the full pipeline with one free group.
pub fn estimate_bre(
    panel_train: &ForecastPanel,
    panel_valid: &ForecastPanel,
    panel_test: &ForecastPanel,
    hyper: &HyperParams,
    lambda0: f64,
    budget: &ChainBudget,
    infer_seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let FitOutcome { params, .. } = fit_with_pinning(panel_train, panel_valid, 1, hyper, false)?;
    infer_point_estimates(panel_test, &params, lambda0, budget, infer_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn readings(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn history_panel(history: &[(&str, &[(f64, f64)])]) -> ForecastPanel {
        // Each instrument gets a list of (forecast, actual) pairs on its own
        // quantities so histories stay independent.
        let mut b = ForecastPanel::builder();
        let mut q = 0usize;
        for (instrument, pairs) in history {
            for &(forecast, actual) in *pairs {
                let qid = format!("{instrument}-q{q}");
                b.add_forecast(&qid, instrument, forecast).unwrap();
                b.set_actual(&qid, actual).unwrap();
                q += 1;
            }
        }
        b.build()
    }

    #[test]
    fn weights_inverse_to_mse() {
        // MSE 1 vs MSE 4 -> weights 0.8 and 0.2.
        let panel = history_panel(&[
            ("a", &[(1.0, 0.0), (-1.0, 0.0)]),
            ("b", &[(2.0, 0.0), (-2.0, 0.0)]),
        ]);
        let w = fit_weights(&panel).unwrap();
        assert!((w.weight("a").unwrap() - 0.8).abs() < 1e-12);
        assert!((w.weight("b").unwrap() - 0.2).abs() < 1e-12);
        assert!(w.no_history.is_empty());
    }

    #[test]
    fn equal_mse_gives_uniform_weights() {
        let panel = history_panel(&[
            ("a", &[(1.0, 0.0)]),
            ("b", &[(-1.0, 0.0)]),
            ("c", &[(1.0, 2.0)]),
        ]);
        let w = fit_weights(&panel).unwrap();
        for id in ["a", "b", "c"] {
            assert!((w.weight(id).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_scale_invariant_in_mse() {
        let base = history_panel(&[
            ("a", &[(1.0, 0.0)]),
            ("b", &[(3.0, 0.0)]),
        ]);
        let scaled = history_panel(&[
            ("a", &[(10.0, 0.0)]),
            ("b", &[(30.0, 0.0)]),
        ]);
        let w1 = fit_weights(&base).unwrap();
        let w2 = fit_weights(&scaled).unwrap();
        assert!((w1.weight("a").unwrap() - w2.weight("a").unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_mse_history_is_floored() {
        let panel = history_panel(&[
            ("perfect", &[(1.0, 1.0), (2.0, 2.0)]),
            ("noisy", &[(1.0, 0.0)]),
        ]);
        let w = fit_weights(&panel).unwrap();
        let perfect = w.weight("perfect").unwrap();
        let noisy = w.weight("noisy").unwrap();
        // Floored inverse MSE: 1e8 vs 1 over a total mass of 1.
        assert!((perfect - 1e8 / (1e8 + 1.0)).abs() < 1e-12);
        assert!((noisy - 1.0 / (1e8 + 1.0)).abs() < 1e-12);
        assert!((perfect + noisy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_history_instrument_gets_mean_weight() {
        let mut b = ForecastPanel::builder();
        b.add_forecast("q1", "a", 1.0).unwrap();
        b.add_forecast("q1", "b", 2.0).unwrap();
        b.set_actual("q1", 0.0).unwrap();
        b.add_forecast("q2", "c", 5.0).unwrap();
        b.set_actual("q2", 5.0).unwrap();
        let full = b.build();
        // Splitting q2 away leaves `c` in the instrument table with no
        // training entries.
        let only_q1: std::collections::BTreeSet<String> = ["q1".to_string()].into();
        let (_, train) = full.split(&only_q1).unwrap();
        let w = fit_weights(&train).unwrap();
        assert_eq!(w.no_history, vec!["c".to_string()]);
        assert!((w.weight("c").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let total: f64 = w.weights.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_estimate_cases() {
        let w = WeightVector {
            format_version: BASELINE_FORMAT_VERSION,
            weights: readings(&[("a", 0.8), ("b", 0.2)]),
            no_history: vec![],
        };
        assert!((estimate_weighted(&readings(&[("a", 1.0), ("b", 6.0)]), &w).unwrap() - 2.0).abs() < 1e-12);

        let w = WeightVector {
            format_version: BASELINE_FORMAT_VERSION,
            weights: readings(&[("a", 1.0), ("b", 0.0)]),
            no_history: vec![],
        };
        assert_eq!(estimate_weighted(&readings(&[("a", 3.0), ("b", 99.0)]), &w).unwrap(), 3.0);

        // Uniform weights equal the plain average.
        let w = WeightVector {
            format_version: BASELINE_FORMAT_VERSION,
            weights: readings(&[("a", 0.25), ("b", 0.25), ("c", 0.25), ("d", 0.25)]),
            no_history: vec![],
        };
        let r = readings(&[("a", 1.0), ("b", 2.0), ("d", 6.0)]);
        let mean = (1.0 + 2.0 + 6.0) / 3.0;
        assert!((estimate_weighted(&r, &w).unwrap() - mean).abs() < 1e-12);

        assert!(estimate_weighted(&BTreeMap::new(), &w).is_err());
        assert!(estimate_weighted(&readings(&[("zz", 1.0)]), &w).is_err());
    }

    #[test]
    fn ridge_inverts_noise_free_affine_map() {
        // Forecasts are f = 2x + 1; the adjustment should invert it.
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| {
            let x = i as f64 - 5.0;
            (2.0 * x + 1.0, x)
        }).collect();
        let panel = history_panel(&[("a", &pairs)]);
        let model = fit_ridge(&panel, 1e-9).unwrap();
        let (slope, intercept) = model.coefficients["a"];
        assert!((slope - 0.5).abs() < 1e-6, "slope {slope}");
        assert!((intercept + 0.5).abs() < 1e-6, "intercept {intercept}");
        // Exactness on the training data as the penalty vanishes.
        for &(f, x) in &pairs {
            assert!((model.adjust("a", f) - x).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_ridge_penalty_falls_back_to_identity() {
        let pairs: Vec<(f64, f64)> = (0..8).map(|i| {
            let x = i as f64;
            (3.0 * x - 2.0, x)
        }).collect();
        let panel = history_panel(&[("a", &pairs)]);
        let model = fit_ridge(&panel, 1e12).unwrap();
        let (slope, intercept) = model.coefficients["a"];
        assert!((slope - 1.0).abs() < 1e-3, "slope {slope}");
        assert!(intercept.abs() < 1e-3, "intercept {intercept}");
    }

    #[test]
    fn singular_design_without_penalty_errors() {
        // Constant forecasts make the design singular.
        let panel = history_panel(&[("a", &[(1.0, 0.0), (1.0, 2.0)])]);
        assert!(matches!(fit_ridge(&panel, 0.0), Err(Error::SingularFit(_))));
        assert!(fit_ridge(&panel, 0.1).is_ok());
    }

    #[test]
    fn regression_estimate_with_identity_model_is_naive() {
        let model = RidgeModel::identity();
        let r = readings(&[("a", 1.0), ("b", 5.0)]);
        assert_eq!(estimate_regression(&r, &model).unwrap(), 3.0);
        assert!(estimate_regression(&BTreeMap::new(), &model).is_err());
    }

    #[test]
    fn regression_estimate_averages_adjusted_readings() {
        let mut coefficients = BTreeMap::new();
        coefficients.insert("a".to_string(), (0.5, -0.5));
        coefficients.insert("b".to_string(), (2.0, 1.0));
        let model = RidgeModel {
            format_version: BASELINE_FORMAT_VERSION,
            coefficients,
            ridge_strength: 0.0,
            skipped: vec![],
        };
        // a: 0.5*4 - 0.5 = 1.5; b: 2*1 + 1 = 3 -> mean 2.25
        let r = readings(&[("a", 4.0), ("b", 1.0)]);
        assert!((estimate_regression(&r, &model).unwrap() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn ridge_matches_direct_normal_equation_solve() {
        // Independent oracle: accumulate the penalized normal equations with
        // plain loops and solve by Cramer's rule.
        let mut pairs = Vec::new();
        let mut state = 88172645463325252u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let x = 10.0 * next() - 5.0;
            let f = 1.4 * x - 0.7 + (next() - 0.5);
            pairs.push((f, x));
        }
        let panel = history_panel(&[("a", &pairs)]);
        let strength = 0.35;
        let model = fit_ridge(&panel, strength).unwrap();

        let (mut sf, mut sf2, mut sx, mut sfx, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(f, x) in &pairs {
            sf += f;
            sf2 += f * f;
            sx += x;
            sfx += f * x;
            n += 1.0;
        }
        let det = (sf2 + strength) * (n + strength) - sf * sf;
        let slope = ((sfx + strength) * (n + strength) - sx * sf) / det;
        let intercept = ((sf2 + strength) * sx - sf * (sfx + strength)) / det;
        let (got_slope, got_intercept) = model.coefficients["a"];
        assert!((got_slope - slope).abs() < 1e-10);
        assert!((got_intercept - intercept).abs() < 1e-10);
    }

    #[test]
    fn naive_consensus_per_quantity() {
        let mut b = ForecastPanel::builder();
        b.add_forecast("q1", "a", 1.0).unwrap();
        b.add_forecast("q1", "b", 3.0).unwrap();
        b.add_forecast("q2", "a", -2.0).unwrap();
        let panel = b.build();
        let naive = consensus_naive(&panel);
        assert_eq!(naive["q1"], 2.0);
        assert_eq!(naive["q2"], -2.0);
    }
}
