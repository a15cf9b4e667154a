//! Gradient-based fitting with minibatching, early stopping and restarts.

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::DEFAULT_LAMBDA0;
use crate::gibbs::{ChainBudget, infer_point_estimates};
use crate::panel::ForecastPanel;
use crate::seed::derive_stream_seed;

use super::objective::{elbo, elbo_gradient};
use super::{HyperParams, LvbcParameters};

const SALT_RESTART: u64 = 0x5253_5431; // "RST1"
const SALT_INIT: u64 = 0x494e_4954; // "INIT"
const SALT_SHUFFLE: u64 = 0x5348_4646; // "SHFF"
const SALT_VALIDATION: u64 = 0x5641_4c44; // "VALD"

/// Chain budget used to score the validation panel each epoch. Short on
/// purpose: it only has to rank parameter snapshots.
const VALIDATION_SAMPLES: usize = 200;
const VALIDATION_BURN_IN: usize = 50;

/// Loss and validation score of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Full-panel objective after the epoch's updates.
    pub elbo: f64,
    /// Validation RMSE of posterior-mean inverse inference.
    pub validation_rmse: f64,
}

/// What happened in one restart.
#[derive(Debug, Clone)]
pub struct RestartTrace {
    pub restart: usize,
    pub epochs: Vec<EpochTrace>,
    pub best_validation_rmse: f64,
    pub best_epoch: usize,
    /// Parameters at the best validation epoch; `None` when aborted.
    pub params: Option<LvbcParameters>,
    /// Diagnostic when the restart aborted on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

/// Summary of a full [`fit`] run.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub restarts: Vec<RestartTrace>,
    pub best_restart: usize,
}

/// Fitted parameters plus the training report.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: LvbcParameters,
    pub report: FitReport,
}

/// Fit a `num_groups`-group model with group 0 pinned to the identity
/// calibration. Runs `hyper.num_restarts` independent restarts (in parallel,
/// each on its own derived seed) and returns the restart whose best epoch had
/// the lowest validation RMSE, ties broken by restart index.
pub fn fit(
    panel_train: &ForecastPanel,
    panel_valid: &ForecastPanel,
    num_groups: usize,
    hyper: &HyperParams,
) -> Result<FitOutcome> {
    fit_with_pinning(panel_train, panel_valid, num_groups, hyper, true)
}

/// [`fit`] with the identifiability pin made optional; an unpinned single
/// group is how the Bayesian-regression baseline is trained.
pub fn fit_with_pinning(
    panel_train: &ForecastPanel,
    panel_valid: &ForecastPanel,
    num_groups: usize,
    hyper: &HyperParams,
    pin_first_group: bool,
) -> Result<FitOutcome> {
    hyper.validate()?;
    if num_groups == 0 {
        return Err(Error::InvalidInput("need at least one latent group".into()));
    }
    if panel_train.is_empty() || panel_valid.is_empty() {
        return Err(Error::InvalidInput("training and validation panels must be non-empty".into()));
    }
    panel_train.require_actuals()?;
    panel_valid.require_actuals()?;

    let restarts: Vec<RestartTrace> = (0..hyper.num_restarts)
        .into_par_iter()
        .map(|r| run_restart(panel_train, panel_valid, num_groups, hyper, pin_first_group, r))
        .collect();

    // Strict comparison keeps the lowest restart index on ties.
    let mut best_restart: Option<usize> = None;
    for trace in &restarts {
        if trace.params.is_none() || !trace.best_validation_rmse.is_finite() {
            continue;
        }
        let better = match best_restart {
            Some(current) => trace.best_validation_rmse < restarts[current].best_validation_rmse,
            None => true,
        };
        if better {
            best_restart = Some(trace.restart);
        }
    }
    match best_restart {
        Some(best) => {
            let params = restarts[best].params.clone().expect("selected restart has params");
            Ok(FitOutcome { params, report: FitReport { restarts, best_restart: best } })
        }
        None => {
            let reasons: Vec<String> = restarts
                .iter()
                .filter_map(|t| t.aborted.as_ref().map(|m| format!("restart {}: {m}", t.restart)))
                .collect();
            Err(Error::TrainingFailure(format!(
                "all {} restarts aborted ({})",
                hyper.num_restarts,
                reasons.join("; ")
            )))
        }
    }
}

fn run_restart(
    panel_train: &ForecastPanel,
    panel_valid: &ForecastPanel,
    num_groups: usize,
    hyper: &HyperParams,
    pin_first_group: bool,
    restart: usize,
) -> RestartTrace {
    let restart_seed = derive_stream_seed(hyper.seed, restart as u64, SALT_RESTART);
    let init_seed = derive_stream_seed(restart_seed, 0, SALT_INIT);
    let validation_seed = derive_stream_seed(restart_seed, 0, SALT_VALIDATION);
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(derive_stream_seed(restart_seed, 0, SALT_SHUFFLE));

    let mut params = LvbcParameters::init(
        num_groups,
        panel_train.instrument_ids().to_vec(),
        hyper,
        pin_first_group,
        init_seed,
    );
    let mut optimizer = Adam::new(hyper.learning_rate, ParamVec::len_of(&params));

    let mut trace = RestartTrace {
        restart,
        epochs: Vec::new(),
        best_validation_rmse: f64::INFINITY,
        best_epoch: 0,
        params: None,
        aborted: None,
    };
    let mut order: Vec<usize> = (0..panel_train.num_entries()).collect();
    let mut epochs_since_best = 0usize;

    for epoch in 0..hyper.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(hyper.minibatch_size) {
            let grad = match elbo_gradient(&params, hyper, panel_train, Some(chunk)) {
                Ok(g) => g,
                Err(e) => {
                    trace.aborted = Some(e.to_string());
                    return trace;
                }
            };
            if !grad.is_finite() {
                trace.aborted = Some(format!("non-finite gradient at epoch {epoch}"));
                return trace;
            }
            optimizer.ascend(&mut params, &grad);
        }

        let objective = match elbo(&params, hyper, panel_train, None) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                trace.aborted = Some(format!("non-finite objective {v} at epoch {epoch}"));
                return trace;
            }
            Err(e) => {
                trace.aborted = Some(e.to_string());
                return trace;
            }
        };
        let validation_rmse =
            match validation_rmse(&params, panel_valid, validation_seed) {
                Ok(v) if v.is_finite() => v,
                Ok(v) => {
                    trace.aborted = Some(format!("non-finite validation RMSE {v} at epoch {epoch}"));
                    return trace;
                }
                Err(e) => {
                    trace.aborted = Some(e.to_string());
                    return trace;
                }
            };
        trace.epochs.push(EpochTrace { epoch, elbo: objective, validation_rmse });

        if validation_rmse < trace.best_validation_rmse {
            trace.best_validation_rmse = validation_rmse;
            trace.best_epoch = epoch;
            trace.params = Some(params.clone());
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= hyper.patience {
                break;
            }
        }
    }
    trace
}

/// RMSE of posterior-mean inverse inference on the validation panel.
fn validation_rmse(params: &LvbcParameters, valid: &ForecastPanel, seed: u64) -> Result<f64> {
    let budget = ChainBudget {
        num_samples: VALIDATION_SAMPLES,
        burn_in: VALIDATION_BURN_IN,
        credible_level: 0.95,
    };
    let estimates = infer_point_estimates(valid, params, DEFAULT_LAMBDA0, &budget, seed)?;
    let mut sq = 0.0;
    let mut n = 0usize;
    for (qid, estimate) in &estimates {
        let q = valid
            .quantity_index(qid)
            .ok_or_else(|| Error::InvalidInput(format!("unknown quantity `{qid}`")))?;
        let actual = valid
            .actual(q)
            .ok_or_else(|| Error::InvalidInput(format!("quantity `{qid}` lacks an actual")))?;
        sq += (estimate - actual) * (estimate - actual);
        n += 1;
    }
    if n == 0 {
        return Err(Error::DegenerateInput("validation panel produced no estimates".into()));
    }
    Ok((sq / n as f64).sqrt())
}

/// Flat view over the trainable parameter vector. The pinned group's
/// alpha/beta entries stay in the vector but their gradient is always zero,
/// so the optimizer never moves them.
struct ParamVec;

impl ParamVec {
    fn len_of(params: &LvbcParameters) -> usize {
        let k = params.num_groups();
        4 * k + k + params.num_instruments() * k
    }

    fn for_each(params: &mut LvbcParameters, grad: &super::objective::LvbcGradient, mut f: impl FnMut(usize, &mut f64, f64)) {
        let mut i = 0;
        for (row, grow) in params.alpha.iter_mut().zip(&grad.alpha) {
            for (v, &g) in row.iter_mut().zip(grow) {
                f(i, v, g);
                i += 1;
            }
        }
        for (row, grow) in params.beta.iter_mut().zip(&grad.beta) {
            for (v, &g) in row.iter_mut().zip(grow) {
                f(i, v, g);
                i += 1;
            }
        }
        for (v, &g) in params.log_sigma.iter_mut().zip(&grad.log_sigma) {
            f(i, v, g);
            i += 1;
        }
        for (row, grow) in params.logits.iter_mut().zip(&grad.logits) {
            for (v, &g) in row.iter_mut().zip(grow) {
                f(i, v, g);
                i += 1;
            }
        }
    }
}

/// Adaptive-moment optimizer (decay 0.9 / 0.999, epsilon 1e-8) stepping in
/// the ascent direction.
struct Adam {
    learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPSILON: f64 = 1e-8;

    fn new(learning_rate: f64, len: usize) -> Self {
        Self { learning_rate, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn ascend(&mut self, params: &mut LvbcParameters, grad: &super::objective::LvbcGradient) {
        self.t += 1;
        let bias1 = 1.0 - Self::BETA1.powi(self.t);
        let bias2 = 1.0 - Self::BETA2.powi(self.t);
        let (m, v) = (&mut self.m, &mut self.v);
        let lr = self.learning_rate;
        ParamVec::for_each(params, grad, |i, value, g| {
            m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g;
            v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            *value += lr * m_hat / (v_hat.sqrt() + Self::EPSILON);
        });
    }
}
