//! Latent-variable Bayesian consensus model.
//!
//! Instruments belong to one of `K` latent calibration groups. Group `k`
//! distorts a true change `x` into readings distributed
//! `Normal(alpha[k] * x + beta[k], sigma[k]^2)`, with separate `alpha`/`beta`
//! values for positive and negative true changes (the sign branch). Group
//! membership of instrument `j` is `Discrete(softmax(logits[j]))`. Group 0 is
//! normally pinned to the identity calibration (`alpha = 1`, `beta = 0`) for
//! identifiability; its noise scale stays free.
//!
//! Learning maximizes the evidence lower bound with a quadratic prior pull
//! toward reference calibration values; see [`elbo`] and [`fit`].

mod objective;
mod train;

pub use objective::{LvbcGradient, elbo, elbo_gradient};
pub use train::{EpochTrace, FitOutcome, FitReport, RestartTrace, fit, fit_with_pinning};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::panel::ForecastPanel;

/// Current on-disk format of parameter snapshots.
pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// Index of the sign branch used for a true change `x`.
pub(crate) fn branch_index(positive: bool) -> usize {
    usize::from(positive)
}

/// Parameters of the latent-variable consensus model.
///
/// `alpha` and `beta` are `K x 2` (group x sign branch), `log_sigma` is per
/// group, and `logits` has one row per instrument. `instruments` names the
/// logits rows so snapshots stay meaningful across panels.
#[derive(Debug, Clone, PartialEq)]
pub struct LvbcParameters {
    pub(crate) alpha: Vec<[f64; 2]>,
    pub(crate) beta: Vec<[f64; 2]>,
    pub(crate) log_sigma: Vec<f64>,
    pub(crate) logits: Vec<Vec<f64>>,
    pub(crate) instruments: Vec<String>,
    pub(crate) pinned_group: Option<usize>,
}

impl LvbcParameters {
    /// Construct and validate a parameter set. When `pinned_group` is set,
    /// that group's `alpha`/`beta` must already hold the identity calibration.
    pub fn new(
        alpha: Vec<[f64; 2]>,
        beta: Vec<[f64; 2]>,
        log_sigma: Vec<f64>,
        logits: Vec<Vec<f64>>,
        instruments: Vec<String>,
        pinned_group: Option<usize>,
    ) -> Result<Self> {
        let k = alpha.len();
        if k == 0 {
            return Err(Error::InvalidInput("need at least one latent group".into()));
        }
        if beta.len() != k || log_sigma.len() != k {
            return Err(Error::InvalidInput(format!(
                "group dimension mismatch: alpha {k}, beta {}, log_sigma {}",
                beta.len(),
                log_sigma.len()
            )));
        }
        if logits.len() != instruments.len() {
            return Err(Error::InvalidInput(format!(
                "logits rows {} do not match instrument count {}",
                logits.len(),
                instruments.len()
            )));
        }
        if let Some(row) = logits.iter().find(|row| row.len() != k) {
            return Err(Error::InvalidInput(format!(
                "logits row length {} does not match group count {k}",
                row.len()
            )));
        }
        if let Some(pin) = pinned_group {
            if pin >= k {
                return Err(Error::InvalidInput(format!(
                    "pinned group {pin} out of range for {k} groups"
                )));
            }
            if alpha[pin] != [1.0, 1.0] || beta[pin] != [0.0, 0.0] {
                return Err(Error::InvalidInput(
                    "pinned group must hold alpha = 1, beta = 0 on both branches".into(),
                ));
            }
        }
        Ok(Self { alpha, beta, log_sigma, logits, instruments, pinned_group })
    }

    /// Identity-calibration single-group parameters over the given
    /// instruments, with the group pinned. Useful as a plain Bayesian
    /// consensus baseline and in tests.
    pub fn identity(instruments: Vec<String>, log_sigma: f64) -> Self {
        let n = instruments.len();
        Self {
            alpha: vec![[1.0, 1.0]],
            beta: vec![[0.0, 0.0]],
            log_sigma: vec![log_sigma],
            logits: vec![vec![0.0]; n],
            instruments,
            pinned_group: Some(0),
        }
    }

    /// Random initialization near the prior, as used by [`fit`].
    pub(crate) fn init(
        num_groups: usize,
        instruments: Vec<String>,
        hyper: &HyperParams,
        pin_first_group: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |mean: f64, sd: f64| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            mean + sd * z
        };
        let mut alpha = Vec::with_capacity(num_groups);
        let mut beta = Vec::with_capacity(num_groups);
        for k in 0..num_groups {
            if pin_first_group && k == 0 {
                alpha.push([1.0, 1.0]);
                beta.push([0.0, 0.0]);
            } else {
                alpha.push([draw(hyper.prior_alpha, 0.1), draw(hyper.prior_alpha, 0.1)]);
                beta.push([draw(hyper.prior_beta, 0.1), draw(hyper.prior_beta, 0.1)]);
            }
        }
        let log_sigma = vec![hyper.prior_sigma.ln(); num_groups];
        let logits = (0..instruments.len())
            .map(|_| (0..num_groups).map(|_| draw(0.0, 0.01)).collect())
            .collect();
        Self {
            alpha,
            beta,
            log_sigma,
            logits,
            instruments,
            pinned_group: pin_first_group.then_some(0),
        }
    }

    pub fn num_groups(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_instruments(&self) -> usize {
        self.instruments.len()
    }

    pub fn instruments(&self) -> &[String] {
        &self.instruments
    }

    pub fn pinned_group(&self) -> Option<usize> {
        self.pinned_group
    }

    /// Slope for group `k` on the branch selected by the sign of the change.
    pub fn alpha(&self, k: usize, positive: bool) -> f64 {
        self.alpha[k][branch_index(positive)]
    }

    pub fn beta(&self, k: usize, positive: bool) -> f64 {
        self.beta[k][branch_index(positive)]
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.log_sigma[k].exp()
    }

    pub fn log_sigma(&self, k: usize) -> f64 {
        self.log_sigma[k]
    }

    pub fn logits_row(&self, instrument: usize) -> &[f64] {
        &self.logits[instrument]
    }

    /// Group membership probabilities of one instrument.
    pub fn membership(&self, instrument: usize) -> Vec<f64> {
        softmax(&self.logits[instrument])
    }

    /// Most likely group per instrument (ties resolve to the lowest index).
    pub fn group_assignments(&self) -> Vec<usize> {
        self.logits
            .iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Locate params rows for every instrument referenced by a panel entry.
    /// Errors on instruments this parameter set does not know.
    pub(crate) fn map_panel_instruments(&self, panel: &ForecastPanel) -> Result<Vec<usize>> {
        let mut map = vec![usize::MAX; panel.num_instruments()];
        for entry in panel.entries() {
            if map[entry.instrument] == usize::MAX {
                let id = panel.instrument_id(entry.instrument);
                map[entry.instrument] =
                    self.instruments.iter().position(|s| s == id).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "panel instrument `{id}` is unknown to the fitted parameters"
                        ))
                    })?;
            }
        }
        Ok(map)
    }
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsEnvelope {
    format_version: u32,
    num_groups: usize,
    alpha: Vec<[f64; 2]>,
    beta: Vec<[f64; 2]>,
    log_sigma: Vec<f64>,
    logits: Vec<Vec<f64>>,
    pinned_group: Option<usize>,
    instruments: Vec<String>,
}

impl Serialize for LvbcParameters {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsEnvelope {
            format_version: PARAMS_FORMAT_VERSION,
            num_groups: self.num_groups(),
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            log_sigma: self.log_sigma.clone(),
            logits: self.logits.clone(),
            pinned_group: self.pinned_group,
            instruments: self.instruments.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LvbcParameters {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let env = ParamsEnvelope::deserialize(deserializer)?;
        if env.format_version != PARAMS_FORMAT_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported parameter format version {}",
                env.format_version
            )));
        }
        if env.num_groups != env.alpha.len() {
            return Err(D::Error::custom(format!(
                "num_groups {} disagrees with alpha rows {}",
                env.num_groups,
                env.alpha.len()
            )));
        }
        LvbcParameters::new(
            env.alpha,
            env.beta,
            env.log_sigma,
            env.logits,
            env.instruments,
            env.pinned_group,
        )
        .map_err(D::Error::custom)
    }
}

/// Training hyper-parameters: prior location and strength, optimizer and
/// schedule settings, and the master seed for all training randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Prior slope the groups are pulled toward.
    pub prior_alpha: f64,
    /// Prior offset.
    pub prior_beta: f64,
    /// Prior noise scale.
    pub prior_sigma: f64,
    /// Weight of the quadratic prior penalty.
    pub prior_strength: f64,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before a restart stops.
    pub patience: usize,
    pub num_restarts: usize,
    pub seed: u64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_strength > 0.0) {
            return Err(Error::InvalidInput(format!(
                "prior_strength must be positive, got {}",
                self.prior_strength
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.prior_sigma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "prior_sigma must be positive, got {}",
                self.prior_sigma
            )));
        }
        if self.minibatch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
            || self.num_restarts == 0
        {
            return Err(Error::InvalidInput(
                "minibatch_size, max_epochs, patience and num_restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            prior_alpha: 1.0,
            prior_beta: 0.0,
            prior_sigma: 2.0,
            prior_strength: 1e3,
            learning_rate: 1e-4,
            minibatch_size: 5000,
            max_epochs: 200,
            patience: 10,
            num_restarts: 10,
            seed: 0,
        }
    }
}

/// Draw a dense forecast panel from the forwards model: instrument `j`
/// (assigned to `groups[j]`) forecasts every quantity with readings
/// `Normal(alpha * x + beta, sigma^2)` under its group's branch parameters.
/// Actuals are attached, so callers can score against the truths.
pub fn simulate_panel(
    params: &LvbcParameters,
    groups: &[usize],
    truths: &[f64],
    seed: u64,
) -> Result<ForecastPanel> {
    if groups.len() != params.num_instruments() {
        return Err(Error::InvalidInput(format!(
            "group assignment length {} does not match instrument count {}",
            groups.len(),
            params.num_instruments()
        )));
    }
    if let Some(&bad) = groups.iter().find(|&&g| g >= params.num_groups()) {
        return Err(Error::InvalidInput(format!("group index {bad} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = truths.len().to_string().len();
    let mut builder = ForecastPanel::builder();
    for (i, &x) in truths.iter().enumerate() {
        let qid = format!("q{i:0width$}");
        builder.set_actual(&qid, x)?;
        let positive = x > 0.0;
        for (j, &group) in groups.iter().enumerate() {
            let mean = params.alpha(group, positive) * x + params.beta(group, positive);
            let noise: f64 = rng.sample(StandardNormal);
            let forecast = mean + params.sigma(group) * noise;
            builder.add_forecast(&qid, &params.instruments[j], forecast)?;
        }
    }
    Ok(builder.build())
}
