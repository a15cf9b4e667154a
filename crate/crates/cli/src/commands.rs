//! The four pipelines behind the subcommands. Every run writes its resolved
//! config echo before any other artifact, so deleting the outputs and
//! re-running the echo reproduces them bit-exactly.

use std::collections::BTreeMap;

use consensus_core::baselines::{
    self, consensus_naive, estimate_bre, fit_ridge, fit_weights, predict_regression,
    predict_weighted,
};
use consensus_core::gibbs::{ChainBudget, gibbs_run, infer_point_estimates};
use consensus_core::lvbc::{FitOutcome, LvbcParameters, fit};
use consensus_core::metrics::{EvalReport, bootstrap_report};
use consensus_core::panel::ForecastPanel;
use consensus_core::seed::derive_stream_seed;
use consensus_core::synthetic::{SyntheticConfig, run_sweep};

use crate::config::{
    BaselineModel, EvalConfig, FitConfig, InferConfig, PipelineBlock, SimulateConfig,
    require_exists, write_echo,
};
use crate::error::{CliError, Result, config_err, data_err, numerical_err};
use crate::io;

const SALT_MODEL_FIT: u64 = 0x4d46_4954; // "MFIT"
const SALT_MODEL_INFER: u64 = 0x4d49_4e46; // "MINF"

fn info(verbosity: u8, message: impl AsRef<str>) {
    if verbosity > 0 {
        eprintln!("{}", message.as_ref());
    }
}

/// `simulate`: Monte-Carlo RMSE sweep over instrument counts.
pub fn run_simulate(config: &SimulateConfig) -> Result<()> {
    let synth = SyntheticConfig {
        delta: config.sim.delta,
        alpha: config.sim.alpha,
        beta: config.sim.beta,
        sigma2: config.sim.sigma2,
        sigma_star2: config.sim.sigma_star2,
        num_quantities: config.sim.num_quantities,
        instrument_counts: config.sim.instrument_counts.clone(),
        num_realizations: config.sim.num_realizations,
        seed: config.seed,
    };
    synth.validate().map_err(config_err)?;
    if config.estimators.is_empty() {
        return Err(CliError::Config("no estimators requested".into()));
    }
    write_echo(config, &config.out_dir)?;

    let result = run_sweep(&synth, &config.estimators).map_err(numerical_err)?;
    for row in &result.rows {
        if row.excluded_quantities > 0 {
            info(
                config.verbosity,
                format!(
                    "{} at {} instruments: {} quantities had no good-labeled reading and were \
                     excluded from its RMSE",
                    row.kind, row.instrument_count, row.excluded_quantities
                ),
            );
        }
    }
    io::write_sweep_csv(&result, &config.out_dir.join("sweep.csv"))
}

/// `fit`: train the latent-group model over the prior-strength grid and keep
/// the strength with the best validation RMSE.
pub fn run_fit(config: &FitConfig) -> Result<()> {
    let block = &config.fit;
    require_exists(&block.forecasts, "forecasts")?;
    require_exists(&block.actuals, "actuals")?;
    require_exists(&block.valid_quantities, "valid_quantities")?;
    if block.lambda_grid.is_empty() {
        return Err(CliError::Config("lambda_grid must be non-empty".into()));
    }
    write_echo(config, &config.out_dir)?;

    let panel = io::load_panel(&block.forecasts, Some(&block.actuals))?;
    let valid_ids = io::read_quantity_list(&block.valid_quantities)?;
    if valid_ids.is_empty() {
        return Err(CliError::Config("validation quantity list is empty".into()));
    }
    let (train, valid) = panel.split(&valid_ids).map_err(data_err)?;
    info(
        config.verbosity,
        format!(
            "fit: {} training and {} validation quantities over {} instruments",
            train.num_quantities(),
            valid.num_quantities(),
            train.num_instruments()
        ),
    );

    let mut best: Option<(f64, f64, FitOutcome)> = None;
    let mut trace = String::from("lambda,restart,epoch,elbo,validation_rmse\n");
    for &lambda in &block.lambda_grid {
        let hyper = block.hyper.to_hyper(lambda, config.seed);
        let outcome =
            fit(&train, &valid, block.num_groups, &hyper).map_err(numerical_err)?;
        for restart in &outcome.report.restarts {
            for epoch in &restart.epochs {
                trace.push_str(&format!(
                    "{},{},{},{},{}\n",
                    io::fmt_f64(lambda),
                    restart.restart,
                    epoch.epoch,
                    io::fmt_f64(epoch.elbo),
                    io::fmt_f64(epoch.validation_rmse)
                ));
            }
        }
        let score = outcome.report.restarts[outcome.report.best_restart].best_validation_rmse;
        info(config.verbosity, format!("fit: lambda {lambda} validation RMSE {score}"));
        if best.as_ref().is_none_or(|(_, s, _)| score < *s) {
            best = Some((lambda, score, outcome));
        }
    }
    let (lambda, score, outcome) = best.expect("non-empty lambda grid");

    let mut params_json = serde_json::to_string_pretty(&outcome.params)
        .map_err(|e| config_err(format!("cannot serialize parameters: {e}")))?;
    params_json.push('\n');
    io::write_text(&config.out_dir.join("params.json"), &params_json)?;
    io::write_text(&config.out_dir.join("trace.csv"), &trace)?;

    let summary = serde_json::json!({
        "chosen_lambda": lambda,
        "best_restart": outcome.report.best_restart,
        "best_validation_rmse": score,
        "restarts": outcome.report.restarts.iter().map(|r| {
            serde_json::json!({
                "restart": r.restart,
                "epochs_ran": r.epochs.len(),
                "best_epoch": r.best_epoch,
                "best_validation_rmse": r.best_validation_rmse,
                "aborted": r.aborted,
            })
        }).collect::<Vec<_>>(),
    });
    io::write_text(
        &config.out_dir.join("fit_summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary).expect("json value")),
    )
}

/// `infer`: posterior-mean consensus estimates with credible intervals.
pub fn run_infer(config: &InferConfig) -> Result<()> {
    let block = &config.infer;
    require_exists(&block.params, "params")?;
    require_exists(&block.forecasts, "forecasts")?;
    let budget = ChainBudget {
        num_samples: block.num_samples,
        burn_in: block.burn_in,
        credible_level: block.ci_level,
    };
    budget.validate().map_err(config_err)?;
    if !(block.lambda0 > 0.0) {
        return Err(CliError::Config(format!(
            "lambda0 must be positive, got {}",
            block.lambda0
        )));
    }
    write_echo(config, &config.out_dir)?;

    let text = std::fs::read_to_string(&block.params)
        .map_err(|e| data_err(format!("cannot read `{}`: {e}", block.params.display())))?;
    let params: LvbcParameters = serde_json::from_str(&text)
        .map_err(|e| data_err(format!("`{}`: {e}", block.params.display())))?;
    let panel = io::load_panel(&block.forecasts, None)?;

    let run = gibbs_run(&panel, &params, block.lambda0, &budget, config.seed)
        .map_err(numerical_err)?;
    if !run.excluded.is_empty() {
        info(
            config.verbosity,
            format!("infer: {} quantities had no readings: {:?}", run.excluded.len(), run.excluded),
        );
    }
    io::write_estimates_csv(&run, &config.out_dir.join("estimates.csv"))
}

/// `eval`: score prediction files and/or run the full model-comparison
/// pipeline, one report row per model.
pub fn run_eval(config: &EvalConfig) -> Result<()> {
    let block = &config.eval;
    require_exists(&block.actuals, "actuals")?;
    for source in &block.predictions {
        require_exists(&source.path, "predictions")?;
    }
    if let Some(groups) = &block.groups {
        require_exists(groups, "groups")?;
    }
    if let Some(pipeline) = &block.pipeline {
        require_exists(&pipeline.train_forecasts, "train_forecasts")?;
        require_exists(&pipeline.train_actuals, "train_actuals")?;
        require_exists(&pipeline.test_forecasts, "test_forecasts")?;
        require_exists(&pipeline.valid_quantities, "valid_quantities")?;
    }
    if block.predictions.is_empty() && block.pipeline.is_none() {
        return Err(CliError::Config(
            "eval needs prediction files, a pipeline block, or both".into(),
        ));
    }
    write_echo(config, &config.out_dir)?;

    let actuals = io::read_predictions(&block.actuals)?;
    let groups = block.groups.as_deref().map(io::read_groups).transpose()?;

    let mut model_predictions: Vec<(String, BTreeMap<String, f64>)> = Vec::new();
    if let Some(pipeline) = &block.pipeline {
        model_predictions.extend(run_pipeline(config.seed, config.verbosity, pipeline)?);
    }
    for source in &block.predictions {
        model_predictions.push((source.model.clone(), io::read_predictions(&source.path)?));
    }
    let mut names: Vec<&String> = model_predictions.iter().map(|(name, _)| name).collect();
    names.sort();
    if let Some(pair) = names.windows(2).find(|pair| pair[0] == pair[1]) {
        return Err(CliError::Config(format!("duplicate model name `{}` in eval", pair[0])));
    }

    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for (model, predictions) in &model_predictions {
        let scoped = actuals_for(predictions, &actuals, model)?;
        // One shared seed pairs the resamples across models.
        let report = bootstrap_report(
            predictions,
            &scoped,
            groups.as_ref(),
            block.n_bootstrap,
            block.ci_level,
            config.seed,
        )
        .map_err(numerical_err)?;
        info(
            config.verbosity,
            format!("eval: {model} micro RMSE {:.6}", report.micro_rmse.point),
        );
        io::write_text(
            &config.out_dir.join(format!("predictions_{model}.csv")),
            &predictions_csv(predictions),
        )?;
        rows.push((model.clone(), report));
    }

    io::write_report_csv(&rows, &config.out_dir.join("report.csv"))?;
    io::write_report_json(&rows, &config.out_dir.join("report.json"))
}

fn predictions_csv(predictions: &BTreeMap<String, f64>) -> String {
    let mut out = String::from("quantity_id,prediction\n");
    for (qid, value) in predictions {
        out.push_str(&format!("{qid},{}\n", io::fmt_f64(*value)));
    }
    out
}

/// Restrict the actuals to the predicted quantities; every prediction must
/// have an actual.
fn actuals_for(
    predictions: &BTreeMap<String, f64>,
    actuals: &BTreeMap<String, f64>,
    model: &str,
) -> Result<BTreeMap<String, f64>> {
    let mut scoped = BTreeMap::new();
    for qid in predictions.keys() {
        match actuals.get(qid) {
            Some(&value) => {
                scoped.insert(qid.clone(), value);
            }
            None => {
                return Err(CliError::Data(format!(
                    "{model} predicts quantity `{qid}` but the actuals file does not cover it"
                )));
            }
        }
    }
    Ok(scoped)
}

/// Fit the requested models on the training panel and predict the test
/// panel.
fn run_pipeline(
    seed: u64,
    verbosity: u8,
    pipeline: &PipelineBlock,
) -> Result<Vec<(String, BTreeMap<String, f64>)>> {
    let panel = io::load_panel(&pipeline.train_forecasts, Some(&pipeline.train_actuals))?;
    let valid_ids = io::read_quantity_list(&pipeline.valid_quantities)?;
    if valid_ids.is_empty() {
        return Err(CliError::Config("validation quantity list is empty".into()));
    }
    let (train, valid) = panel.split(&valid_ids).map_err(data_err)?;
    let test = io::load_panel(&pipeline.test_forecasts, None)?;
    let budget = ChainBudget {
        num_samples: pipeline.num_samples,
        burn_in: pipeline.burn_in,
        credible_level: 0.95,
    };
    budget.validate().map_err(config_err)?;

    let mut out = Vec::new();
    for (index, model) in pipeline.models.iter().enumerate() {
        let fit_seed = derive_stream_seed(seed, index as u64, SALT_MODEL_FIT);
        let infer_seed = derive_stream_seed(seed, index as u64, SALT_MODEL_INFER);
        info(verbosity, format!("eval pipeline: computing {}", model.name()));
        let predictions = match model {
            BaselineModel::Ne => consensus_naive(&test),
            BaselineModel::We => {
                let weights = fit_weights(&train).map_err(numerical_err)?;
                if !weights.no_history.is_empty() {
                    info(
                        verbosity,
                        format!(
                            "eval pipeline: {} instruments had no history and received the mean \
                             weight",
                            weights.no_history.len()
                        ),
                    );
                }
                predict_weighted(&test, &weights).map_err(numerical_err)?
            }
            BaselineModel::Re => {
                let model = select_ridge(&train, &valid, &pipeline.ridge_grid, verbosity)?;
                predict_regression(&test, &model).map_err(numerical_err)?
            }
            BaselineModel::Bre => {
                let hyper = pipeline.hyper.to_hyper(pipeline.lambda, fit_seed);
                estimate_bre(&train, &valid, &test, &hyper, pipeline.lambda0, &budget, infer_seed)
                    .map_err(numerical_err)?
            }
            BaselineModel::Lvbc => {
                let hyper = pipeline.hyper.to_hyper(pipeline.lambda, fit_seed);
                let outcome =
                    fit(&train, &valid, pipeline.num_groups, &hyper).map_err(numerical_err)?;
                infer_point_estimates(&test, &outcome.params, pipeline.lambda0, &budget, infer_seed)
                    .map_err(numerical_err)?
            }
        };
        out.push((model.name().to_string(), predictions));
    }
    Ok(out)
}

/// Pick the ridge strength with the lowest validation RMSE (ties keep the
/// earliest grid entry).
fn select_ridge(
    train: &ForecastPanel,
    valid: &ForecastPanel,
    grid: &[f64],
    verbosity: u8,
) -> Result<baselines::RidgeModel> {
    if grid.is_empty() {
        return Err(CliError::Config("ridge_grid must be non-empty".into()));
    }
    let mut best: Option<(f64, baselines::RidgeModel)> = None;
    for &strength in grid {
        let model = fit_ridge(train, strength).map_err(numerical_err)?;
        let predictions = predict_regression(valid, &model).map_err(numerical_err)?;
        let mut sq = 0.0;
        let mut n = 0usize;
        for (qid, prediction) in &predictions {
            let q = valid.quantity_index(qid).expect("prediction from valid panel");
            let actual = valid
                .actual(q)
                .ok_or_else(|| CliError::Data(format!("quantity `{qid}` lacks an actual")))?;
            sq += (prediction - actual) * (prediction - actual);
            n += 1;
        }
        let rmse = (sq / n.max(1) as f64).sqrt();
        info(verbosity, format!("eval pipeline: ridge strength {strength} RMSE {rmse}"));
        if best.as_ref().is_none_or(|(s, _)| rmse < *s) {
            best = Some((rmse, model));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

