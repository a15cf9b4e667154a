//! Evidence lower bound and its exact gradient.
//!
//! For entry (i, j) with true change `x_i`, forecast `f_ij`, sign branch
//! `b_i = 1{x_i > 0}` and membership probabilities `s_jk = softmax(logits_j)`:
//!
//! ```text
//! data(i,j) = sum_k s_jk * ( -(f_ij - alpha[k][b] * x_i - beta[k][b])^2 / (2 sigma_k^2)
//!                            - ln sigma_k )
//! ```
//!
//! The objective is `sum data - scale * strength * penalty`, where `penalty`
//! is the squared distance of (alpha, beta, sigma) from their prior values
//! (the pinned group's alpha/beta excluded), and `scale` is the evaluated
//! fraction of entries so that the objective is additive over any partition
//! of the entries and minibatch gradients are unbiased.

use crate::error::{Error, Result};
use crate::panel::ForecastPanel;

use super::{HyperParams, LvbcParameters, branch_index, softmax};

/// Partial derivatives of the objective, mirroring [`LvbcParameters`].
/// Entries of a pinned group's `alpha`/`beta` are identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LvbcGradient {
    pub alpha: Vec<[f64; 2]>,
    pub beta: Vec<[f64; 2]>,
    pub log_sigma: Vec<f64>,
    pub logits: Vec<Vec<f64>>,
}

impl LvbcGradient {
    fn zeros(params: &LvbcParameters) -> Self {
        let k = params.num_groups();
        Self {
            alpha: vec![[0.0; 2]; k],
            beta: vec![[0.0; 2]; k],
            log_sigma: vec![0.0; k],
            logits: params.logits.iter().map(|row| vec![0.0; row.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).flatten().all(|v| v.is_finite())
            && self.log_sigma.iter().all(|v| v.is_finite())
            && self.logits.iter().flatten().all(|v| v.is_finite())
    }
}

struct EntryContext<'a> {
    panel: &'a ForecastPanel,
    subset: Option<&'a [usize]>,
    scale: f64,
    /// Panel instrument index -> params row.
    map: Vec<usize>,
    /// Membership probabilities indexed by panel instrument.
    memberships: Vec<Vec<f64>>,
    inv_var: Vec<f64>,
}

fn prepare<'a>(
    params: &LvbcParameters,
    panel: &'a ForecastPanel,
    subset: Option<&'a [usize]>,
) -> Result<EntryContext<'a>> {
    if panel.is_empty() {
        return Err(Error::InvalidInput("panel has no entries".into()));
    }
    if let Some(indices) = subset
        && let Some(&bad) = indices.iter().find(|&&i| i >= panel.num_entries())
    {
        return Err(Error::InvalidInput(format!(
            "subset index {bad} out of range for {} entries",
            panel.num_entries()
        )));
    }
    let scale = match subset {
        Some(indices) => indices.len() as f64 / panel.num_entries() as f64,
        None => 1.0,
    };
    // Memberships are indexed by *panel* instrument; map through ids so a
    // panel can be a quantity-subset of the training universe.
    let map = params.map_panel_instruments(panel)?;
    let memberships: Vec<Vec<f64>> = map
        .iter()
        .map(|&row| {
            if row == usize::MAX { Vec::new() } else { softmax(&params.logits[row]) }
        })
        .collect();
    let inv_var: Vec<f64> = params.log_sigma.iter().map(|u| (-2.0 * u).exp()).collect();
    Ok(EntryContext { panel, subset, scale, map, memberships, inv_var })
}

fn for_each_entry<F: FnMut(usize, f64, f64, usize)>(ctx: &EntryContext<'_>, mut f: F) -> Result<()> {
    let mut apply = |index: usize| -> Result<()> {
        let entry = &ctx.panel.entries()[index];
        let actual = ctx.panel.actual(entry.quantity).ok_or_else(|| {
            Error::InvalidInput(format!(
                "quantity `{}` has no actual; the objective needs true changes",
                ctx.panel.quantity_id(entry.quantity)
            ))
        })?;
        let branch = branch_index(actual > 0.0);
        f(entry.instrument, actual, entry.forecast, branch);
        Ok(())
    };
    match ctx.subset {
        Some(indices) => {
            for &i in indices {
                apply(i)?;
            }
        }
        None => {
            for i in 0..ctx.panel.num_entries() {
                apply(i)?;
            }
        }
    }
    Ok(())
}

/// Prior penalty: squared distance of the free calibration parameters from
/// their prior values. The pinned group contributes only its sigma term.
fn prior_penalty(params: &LvbcParameters, hyper: &HyperParams) -> f64 {
    let mut total = 0.0;
    for k in 0..params.num_groups() {
        if params.pinned_group != Some(k) {
            for b in 0..2 {
                let da = params.alpha[k][b] - hyper.prior_alpha;
                let db = params.beta[k][b] - hyper.prior_beta;
                total += da * da + db * db;
            }
        }
        let ds = params.log_sigma[k].exp() - hyper.prior_sigma;
        total += ds * ds;
    }
    total
}

/// Evidence lower bound over the whole panel or a subset of entry indices.
pub fn elbo(
    params: &LvbcParameters,
    hyper: &HyperParams,
    panel: &ForecastPanel,
    subset: Option<&[usize]>,
) -> Result<f64> {
    let ctx = prepare(params, panel, subset)?;
    let mut data = 0.0;
    for_each_entry(&ctx, |instrument, actual, forecast, branch| {
        let weights = &ctx.memberships[instrument];
        for (k, &w) in weights.iter().enumerate() {
            let residual = forecast - (params.alpha[k][branch] * actual + params.beta[k][branch]);
            data += w * (-0.5 * residual * residual * ctx.inv_var[k] - params.log_sigma[k]);
        }
    })?;
    Ok(data - ctx.scale * hyper.prior_strength * prior_penalty(params, hyper))
}

/// Exact gradient of [`elbo`] with respect to every free parameter.
pub fn elbo_gradient(
    params: &LvbcParameters,
    hyper: &HyperParams,
    panel: &ForecastPanel,
    subset: Option<&[usize]>,
) -> Result<LvbcGradient> {
    let ctx = prepare(params, panel, subset)?;
    let mut grad = LvbcGradient::zeros(params);
    let k_groups = params.num_groups();
    let mut terms = vec![0.0f64; k_groups];

    for_each_entry(&ctx, |instrument, actual, forecast, branch| {
        let weights = &ctx.memberships[instrument];
        let row = ctx.map[instrument];
        let mut mean_term = 0.0;
        for k in 0..k_groups {
            let residual = forecast - (params.alpha[k][branch] * actual + params.beta[k][branch]);
            let r_inv_var = residual * ctx.inv_var[k];
            let term = -0.5 * residual * r_inv_var - params.log_sigma[k];
            terms[k] = term;
            mean_term += weights[k] * term;
            grad.alpha[k][branch] += weights[k] * r_inv_var * actual;
            grad.beta[k][branch] += weights[k] * r_inv_var;
            grad.log_sigma[k] += weights[k] * (residual * r_inv_var - 1.0);
        }
        let logits_row = &mut grad.logits[row];
        for k in 0..k_groups {
            logits_row[k] += weights[k] * (terms[k] - mean_term);
        }
    })?;

    // Prior pull, scaled like the data term.
    let pull = 2.0 * ctx.scale * hyper.prior_strength;
    for k in 0..k_groups {
        if params.pinned_group != Some(k) {
            for b in 0..2 {
                grad.alpha[k][b] -= pull * (params.alpha[k][b] - hyper.prior_alpha);
                grad.beta[k][b] -= pull * (params.beta[k][b] - hyper.prior_beta);
            }
        }
        let sigma = params.log_sigma[k].exp();
        grad.log_sigma[k] -= pull * (sigma - hyper.prior_sigma) * sigma;
    }

    if let Some(pin) = params.pinned_group {
        grad.alpha[pin] = [0.0; 2];
        grad.beta[pin] = [0.0; 2];
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lvbc::simulate_panel;

    fn single_entry_panel(forecast: f64, actual: f64) -> ForecastPanel {
        let mut b = ForecastPanel::builder();
        b.add_forecast("q", "a", forecast).unwrap();
        b.set_actual("q", actual).unwrap();
        b.build()
    }

    fn identity_hyper(strength: f64) -> HyperParams {
        HyperParams {
            prior_alpha: 1.0,
            prior_beta: 0.0,
            prior_sigma: 1.0,
            prior_strength: strength,
            ..HyperParams::default()
        }
    }

    fn unit_identity_params() -> LvbcParameters {
        LvbcParameters::identity(vec!["a".into()], 0.0)
    }

    #[test]
    fn zero_residual_unit_sigma_scores_zero() {
        let panel = single_entry_panel(2.0, 2.0);
        let params = unit_identity_params();
        // The penalty is zero at the prior, so any strength works here.
        let value = elbo(&params, &identity_hyper(5.0), &panel, None).unwrap();
        assert!(value.abs() < 1e-12, "elbo {value}");
    }

    #[test]
    fn unit_residual_scores_minus_half_times_square() {
        let panel = single_entry_panel(3.0, 1.0);
        let params = unit_identity_params();
        let value = elbo(&params, &identity_hyper(5.0), &panel, None).unwrap();
        assert!((value + 2.0).abs() < 1e-12, "elbo {value}");
    }

    #[test]
    fn additive_over_entry_partitions() {
        let params = LvbcParameters::new(
            vec![[1.0, 1.0], [0.6, 1.3]],
            vec![[0.0, 0.0], [0.2, -0.4]],
            vec![0.3, -0.2],
            vec![vec![0.4, -0.1], vec![-0.7, 0.2], vec![0.0, 0.5]],
            vec!["a".into(), "b".into(), "c".into()],
            Some(0),
        )
        .unwrap();
        let truths = [1.5, -0.7, 2.2, 0.4];
        let panel = simulate_panel(&params, &[0, 1, 1], &truths, 3).unwrap();
        let hyper = HyperParams { prior_strength: 123.0, ..HyperParams::default() };

        let n = panel.num_entries();
        let full = elbo(&params, &hyper, &panel, None).unwrap();
        let parts: Vec<Vec<usize>> = vec![
            (0..n / 3).collect(),
            (n / 3..n / 2).collect(),
            (n / 2..n).collect(),
        ];
        let sum: f64 = parts
            .iter()
            .map(|p| elbo(&params, &hyper, &panel, Some(p)).unwrap())
            .sum();
        assert!((full - sum).abs() < 1e-9, "full {full} vs partition sum {sum}");
    }

    #[test]
    fn stronger_prior_never_raises_the_objective() {
        let params = LvbcParameters::new(
            vec![[1.0, 1.0], [0.8, 0.9]],
            vec![[0.0, 0.0], [0.3, 0.1]],
            vec![0.4, 0.2],
            vec![vec![0.0, 0.0]],
            vec!["a".into()],
            Some(0),
        )
        .unwrap();
        let panel = single_entry_panel(1.0, 1.0);
        let mut last = f64::INFINITY;
        for strength in [1.0, 10.0, 100.0, 1000.0] {
            let hyper = HyperParams { prior_strength: strength, ..HyperParams::default() };
            let value = elbo(&params, &hyper, &panel, None).unwrap();
            assert!(value <= last);
            last = value;
        }
    }

    #[test]
    fn gradient_zero_at_stationary_point() {
        // Identity data, identity parameters, sigma at its prior, no pull.
        let panel = single_entry_panel(2.0, 2.0);
        let params = unit_identity_params();
        let grad = elbo_gradient(&params, &identity_hyper(7.0), &panel, None).unwrap();
        assert_eq!(grad.alpha[0], [0.0, 0.0]);
        assert_eq!(grad.beta[0], [0.0, 0.0]);
        // d/d log_sigma = r^2/sigma^2 - 1 = -1 at r = 0... except the prior
        // term vanishes at sigma = prior_sigma = 1, so only the data term
        // remains.
        assert!((grad.log_sigma[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn logits_gradient_rows_sum_to_zero() {
        let params = LvbcParameters::new(
            vec![[1.0, 1.0], [0.5, 1.5], [2.0, 0.3]],
            vec![[0.0, 0.0], [0.1, -0.2], [-0.5, 0.4]],
            vec![0.1, -0.3, 0.6],
            vec![vec![0.2, -0.4, 0.1], vec![1.0, 0.0, -1.0]],
            vec!["a".into(), "b".into()],
            Some(0),
        )
        .unwrap();
        let truths = [0.9, -1.4, 2.0];
        let panel = simulate_panel(&params, &[1, 2], &truths, 17).unwrap();
        let hyper = HyperParams { prior_strength: 50.0, ..HyperParams::default() };
        let grad = elbo_gradient(&params, &hyper, &panel, None).unwrap();
        for row in &grad.logits {
            let total: f64 = row.iter().sum();
            assert!(total.abs() < 1e-10, "logits row sums to {total}");
        }
    }

    #[test]
    fn permutation_of_free_groups_leaves_elbo_unchanged() {
        let params = LvbcParameters::new(
            vec![[1.0, 1.0], [0.5, 1.5], [2.0, 0.3], [1.1, 0.9]],
            vec![[0.0, 0.0], [0.1, -0.2], [-0.5, 0.4], [0.05, 0.0]],
            vec![0.1, -0.3, 0.6, 0.2],
            vec![vec![0.2, -0.4, 0.1, 0.3], vec![1.0, 0.0, -1.0, 0.25]],
            vec!["a".into(), "b".into()],
            Some(0),
        )
        .unwrap();
        let truths = [0.9, -1.4, 2.0, 0.2];
        let panel = simulate_panel(&params, &[1, 2], &truths, 23).unwrap();
        let hyper = HyperParams { prior_strength: 77.0, ..HyperParams::default() };
        let base = elbo(&params, &hyper, &panel, None).unwrap();

        // Swap free groups 1 and 3 (group 0 stays pinned), permuting logits
        // columns identically.
        let perm = [0usize, 3, 2, 1];
        let permuted = LvbcParameters::new(
            perm.iter().map(|&k| params.alpha[k]).collect(),
            perm.iter().map(|&k| params.beta[k]).collect(),
            perm.iter().map(|&k| params.log_sigma[k]).collect(),
            params
                .logits
                .iter()
                .map(|row| perm.iter().map(|&k| row[k]).collect())
                .collect(),
            params.instruments.clone(),
            Some(0),
        )
        .unwrap();
        let value = elbo(&permuted, &hyper, &panel, None).unwrap();
        assert!((base - value).abs() < 1e-9, "{base} vs {value}");
    }

    /// Central finite differences over every free coordinate.
    fn finite_difference_check(params: &LvbcParameters, hyper: &HyperParams, panel: &ForecastPanel) {
        let step = 1e-5;
        let grad = elbo_gradient(params, hyper, panel, None).unwrap();
        let check = |numeric: f64, analytic: f64, what: &str| {
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
            assert!(
                rel < 1e-5,
                "{what}: finite difference {numeric} vs analytic {analytic} (rel {rel})"
            );
        };
        let eval = |p: &LvbcParameters| elbo(p, hyper, panel, None).unwrap();
        let k_groups = params.num_groups();
        for k in 0..k_groups {
            for b in 0..2 {
                if params.pinned_group == Some(k) {
                    assert_eq!(grad.alpha[k][b], 0.0);
                    assert_eq!(grad.beta[k][b], 0.0);
                    continue;
                }
                let mut hi = params.clone();
                let mut lo = params.clone();
                hi.alpha[k][b] += step;
                lo.alpha[k][b] -= step;
                check((eval(&hi) - eval(&lo)) / (2.0 * step), grad.alpha[k][b], "alpha");
                let mut hi = params.clone();
                let mut lo = params.clone();
                hi.beta[k][b] += step;
                lo.beta[k][b] -= step;
                check((eval(&hi) - eval(&lo)) / (2.0 * step), grad.beta[k][b], "beta");
            }
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi.log_sigma[k] += step;
            lo.log_sigma[k] -= step;
            check((eval(&hi) - eval(&lo)) / (2.0 * step), grad.log_sigma[k], "log_sigma");
        }
        for j in 0..params.num_instruments() {
            for k in 0..k_groups {
                let mut hi = params.clone();
                let mut lo = params.clone();
                hi.logits[j][k] += step;
                lo.logits[j][k] -= step;
                check((eval(&hi) - eval(&lo)) / (2.0 * step), grad.logits[j][k], "logits");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // K = 3 with a pinned group, mixed-sign truths so both branches carry
        // entries, strong prior pull.
        let params = LvbcParameters::new(
            vec![[1.0, 1.0], [0.55, 1.45], [1.9, 0.35]],
            vec![[0.0, 0.0], [0.12, -0.22], [-0.47, 0.38]],
            vec![0.15, -0.32, 0.58],
            vec![
                vec![0.21, -0.43, 0.12],
                vec![0.95, 0.04, -1.02],
                vec![-0.33, 0.68, 0.27],
                vec![0.05, -0.15, 0.44],
            ],
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            Some(0),
        )
        .unwrap();
        let truths = [1.4, -0.8, 2.3, -1.9, 0.6];
        let panel = simulate_panel(&params, &[0, 1, 2, 1], &truths, 31).unwrap();
        let hyper = HyperParams { prior_strength: 80.0, ..HyperParams::default() };
        finite_difference_check(&params, &hyper, &panel);
    }

    #[test]
    fn gradient_matches_finite_differences_single_free_group() {
        // K = 1, unpinned (the Bayesian-regression training configuration).
        let params = LvbcParameters::new(
            vec![[0.75, 1.3]],
            vec![[0.25, -0.1]],
            vec![-0.4],
            vec![vec![0.3], vec![-0.2]],
            vec!["a".into(), "b".into()],
            None,
        )
        .unwrap();
        let truths = [2.0, -1.5, 0.7, -0.4];
        let panel = simulate_panel(&params, &[0, 0], &truths, 57).unwrap();
        let hyper = HyperParams { prior_strength: 33.0, ..HyperParams::default() };
        finite_difference_check(&params, &hyper, &panel);
    }

    #[test]
    fn subset_out_of_range_rejected() {
        let panel = single_entry_panel(1.0, 1.0);
        let params = unit_identity_params();
        assert!(elbo(&params, &identity_hyper(1.0), &panel, Some(&[3])).is_err());
    }

    #[test]
    fn missing_actual_rejected() {
        let mut b = ForecastPanel::builder();
        b.add_forecast("q", "a", 1.0).unwrap();
        let panel = b.build();
        let params = unit_identity_params();
        assert!(elbo(&params, &identity_hyper(1.0), &panel, None).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn random_setup(
            seed: u64,
            alpha1: f64,
            beta1: f64,
            strength: f64,
        ) -> (LvbcParameters, HyperParams, ForecastPanel) {
            let params = LvbcParameters::new(
                vec![[1.0, 1.0], [alpha1, 1.0 + (alpha1 - 1.0) / 2.0]],
                vec![[0.0, 0.0], [beta1, -beta1]],
                vec![0.2, -0.1],
                vec![vec![0.3, -0.2], vec![-0.4, 0.5], vec![0.0, 0.1]],
                vec!["a".into(), "b".into(), "c".into()],
                Some(0),
            )
            .unwrap();
            let truths = [1.3, -0.6, 2.4, -1.8, 0.9, -2.5];
            let panel = simulate_panel(&params, &[0, 1, 1], &truths, seed).unwrap();
            let hyper = HyperParams { prior_strength: strength, ..HyperParams::default() };
            (params, hyper, panel)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            // The objective is additive over any partition of the entries.
            #[test]
            fn additivity(
                seed in 0u64..1000,
                alpha1 in 0.3f64..2.0,
                beta1 in -0.5f64..0.5,
                strength in 1.0f64..500.0,
                cut in 1usize..17,
            ) {
                let (params, hyper, panel) = random_setup(seed, alpha1, beta1, strength);
                let n = panel.num_entries();
                let cut = cut.min(n - 1);
                let full = elbo(&params, &hyper, &panel, None).unwrap();
                let head: Vec<usize> = (0..cut).collect();
                let tail: Vec<usize> = (cut..n).collect();
                let sum = elbo(&params, &hyper, &panel, Some(&head)).unwrap()
                    + elbo(&params, &hyper, &panel, Some(&tail)).unwrap();
                prop_assert!((full - sum).abs() < 1e-9 * (1.0 + full.abs()));
            }

            // Small plain-gradient ascent steps strictly increase the
            // objective for at least ten steps from a generic point.
            #[test]
            fn ascent_increases_objective(
                seed in 0u64..1000,
                alpha1 in 0.3f64..2.0,
                beta1 in -0.5f64..0.5,
                strength in 1.0f64..200.0,
            ) {
                let (mut params, hyper, panel) = random_setup(seed, alpha1, beta1, strength);
                let mut last = elbo(&params, &hyper, &panel, None).unwrap();
                for _ in 0..10 {
                    let grad = elbo_gradient(&params, &hyper, &panel, None).unwrap();
                    let step = 1e-7;
                    for k in 0..params.num_groups() {
                        for b in 0..2 {
                            params.alpha[k][b] += step * grad.alpha[k][b];
                            params.beta[k][b] += step * grad.beta[k][b];
                        }
                        params.log_sigma[k] += step * grad.log_sigma[k];
                    }
                    for (row, grow) in params.logits.iter_mut().zip(&grad.logits) {
                        for (v, g) in row.iter_mut().zip(grow) {
                            *v += step * g;
                        }
                    }
                    let now = elbo(&params, &hyper, &panel, None).unwrap();
                    prop_assert!(now > last, "objective fell from {last} to {now}");
                    last = now;
                }
            }
        }
    }
}
