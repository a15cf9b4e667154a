//! Round-trip, parse-error and exit-code behavior of the IO layer and the
//! binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use consensus_cli::config::{FitConfig, SimulateConfig, load_config};
use consensus_cli::io::{load_panel, realization_to_panel, write_panel};
use consensus_core::synthetic::{SyntheticConfig, generate_realization};

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn realization_round_trips_through_csv_bit_exactly() {
    let config = SyntheticConfig {
        delta: 0.4,
        alpha: 0.8,
        beta: -0.2,
        sigma2: 1.0,
        sigma_star2: 1.5,
        num_quantities: 40,
        instrument_counts: vec![7],
        num_realizations: 1,
        seed: 123,
    };
    let realization = generate_realization(&config, 7, 999);
    let panel = realization_to_panel(&realization).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let forecasts = dir.path().join("forecasts.csv");
    let actuals = dir.path().join("actuals.csv");
    write_panel(&panel, &forecasts, &actuals).unwrap();
    let parsed = load_panel(&forecasts, Some(&actuals)).unwrap();

    assert_eq!(parsed.num_entries(), panel.num_entries());
    for (a, b) in panel.entries().iter().zip(parsed.entries()) {
        assert_eq!(a.forecast.to_bits(), b.forecast.to_bits());
        assert_eq!(panel.quantity_id(a.quantity), parsed.quantity_id(b.quantity));
        assert_eq!(panel.instrument_id(a.instrument), parsed.instrument_id(b.instrument));
    }
    for q in 0..panel.num_quantities() {
        assert_eq!(
            panel.actual(q).unwrap().to_bits(),
            parsed.actual(parsed.quantity_index(panel.quantity_id(q)).unwrap()).unwrap().to_bits()
        );
    }
}

#[test]
fn two_row_file_builds_two_entry_panel() {
    let dir = tempfile::tempdir().unwrap();
    let forecasts = dir.path().join("f.csv");
    write(&forecasts, "quantity_id,instrument_id,forecast\nq1,a,1.5\nq1,b,2.5\n");
    let panel = load_panel(&forecasts, None).unwrap();
    assert_eq!(panel.num_entries(), 2);
    assert_eq!(panel.num_quantities(), 1);
    assert_eq!(panel.num_instruments(), 2);
}

#[test]
fn malformed_row_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let forecasts = dir.path().join("f.csv");
    write(&forecasts, "quantity_id,instrument_id,forecast\nq1,a,1.5\nq2,b,not-a-number\n");
    let err = load_panel(&forecasts, None).unwrap_err();
    assert!(err.message().contains("line 3"), "message was: {}", err.message());
}

#[test]
fn duplicate_pair_reports_the_offending_row() {
    let dir = tempfile::tempdir().unwrap();
    let forecasts = dir.path().join("f.csv");
    write(&forecasts, "quantity_id,instrument_id,forecast\nq1,a,1.5\nq1,a,2.5\n");
    let err = load_panel(&forecasts, None).unwrap_err();
    assert!(err.message().contains("line 3"), "message was: {}", err.message());
    assert!(err.message().contains("q1"), "message was: {}", err.message());
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn wrong_header_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let forecasts = dir.path().join("f.csv");
    write(&forecasts, "quantity,instrument,value\nq1,a,1.5\n");
    assert!(load_panel(&forecasts, None).is_err());
}

#[test]
fn unknown_config_keys_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    write(
        &path,
        r#"{"seed":1,"out_dir":"x","sim":{"delta":0.5,"alpha":1.0,"beta":0.0,
            "sigma2":1.0,"sigma_star2":1.0,"num_quantities":1,
            "instrument_counts":[2],"num_realizations":1},"surprise":true}"#,
    );
    let err = load_config::<SimulateConfig>(&path).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.message().contains("surprise"), "message: {}", err.message());
}

#[test]
fn missing_input_path_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    write(
        &path,
        r#"{"seed":1,"out_dir":"out","fit":{"forecasts":"nope.csv","actuals":"nope2.csv",
            "valid_quantities":"nope3.txt","num_groups":1,
            "hyper":{"max_epochs":1,"patience":1}}}"#,
    );
    let config = load_config::<FitConfig>(&path).unwrap();
    let err = consensus_cli::commands::run_fit(&config).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_consensus"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // Config error: unparsable document.
    let bad = dir.path().join("bad.json");
    write(&bad, "{ not json");
    let output = binary().args(["simulate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "one machine-parsable line, got: {stderr}");
    assert!(lines[0].starts_with("error: code=2 kind=config"));

    // Data error: malformed CSV behind a valid config.
    let forecasts = dir.path().join("f.csv");
    write(&forecasts, "quantity_id,instrument_id,forecast\nq1,a,oops\n");
    let actuals = dir.path().join("a.csv");
    write(&actuals, "quantity_id,actual\nq1,1.0\n");
    let valid = dir.path().join("v.txt");
    write(&valid, "q1\n");
    let config = dir.path().join("fit.json");
    write(
        &config,
        &format!(
            r#"{{"seed":1,"out_dir":{:?},"fit":{{"forecasts":{:?},"actuals":{:?},
                "valid_quantities":{:?},"num_groups":1,
                "hyper":{{"max_epochs":1,"patience":1}}}}}}"#,
            dir.path().join("out"),
            forecasts,
            actuals,
            valid
        ),
    );
    let output = binary().args(["fit", "--config"]).arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.starts_with("error: code=3 kind=data"), "stderr: {stderr}");
}

#[test]
fn eval_on_identical_prediction_and_actual_files_scores_zero_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let actuals = dir.path().join("a.csv");
    write(&actuals, "quantity_id,actual\nq1,1.5\nq2,-0.5\nq3,2.0\nq4,0.25\n");
    let config = dir.path().join("eval.json");
    write(
        &config,
        &format!(
            r#"{{"seed":3,"out_dir":{:?},"eval":{{"actuals":{:?},
                "predictions":[{{"model":"SELF","path":{:?}}}],
                "n_bootstrap":100}}}}"#,
            dir.path().join("out"),
            actuals,
            actuals
        ),
    );
    let status = binary().args(["eval", "--config"]).arg(&config).status().unwrap();
    assert!(status.success());
    let report = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let row = report.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "SELF");
    assert_eq!(fields[3].parse::<f64>().unwrap(), 0.0, "micro rmse: {row}");
    assert_eq!(fields[4].parse::<f64>().unwrap(), 0.0, "micro mae: {row}");
    assert_eq!(fields[5].parse::<f64>().unwrap(), 1.0, "micro r2: {row}");
}

#[test]
fn eval_pipeline_ranks_latent_group_model_above_naive() {
    // End-to-end through the binary on generated data: a panel with half the
    // instruments miscalibrated must score LVBC strictly below NE on micro
    // RMSE.
    use consensus_core::lvbc::{LvbcParameters, simulate_panel};

    let dir = tempfile::tempdir().unwrap();
    let truth = LvbcParameters::new(
        vec![[1.0, 1.0], [0.7, 0.7]],
        vec![[0.0, 0.0], [-0.3, -0.3]],
        vec![0.5f64.ln(), 0.5f64.ln()],
        vec![vec![0.0, 0.0]; 10],
        (0..10).map(|j| format!("a{j}")).collect(),
        Some(0),
    )
    .unwrap();
    let groups: Vec<usize> = (0..10).map(|j| j % 2).collect();
    let truths: Vec<f64> = (0..80).map(|i| -5.0 + 10.0 * (i as f64 + 0.5) / 80.0).collect();
    let panel = simulate_panel(&truth, &groups, &truths, 2_024).unwrap();
    write_panel(&panel, &dir.path().join("f.csv"), &dir.path().join("a.csv")).unwrap();
    let valid: Vec<String> = (0..80).step_by(5).map(|i| format!("q{i:02}")).collect();
    write(&dir.path().join("valid.txt"), &valid.join("\n"));

    let config = dir.path().join("eval.json");
    write(
        &config,
        &format!(
            r#"{{"seed":12,"out_dir":{:?},"eval":{{"actuals":{:?},
                "pipeline":{{
                    "train_forecasts":{:?},"train_actuals":{:?},
                    "test_forecasts":{:?},"valid_quantities":{:?},
                    "models":["NE","LVBC"],"num_groups":2,"lambda":100.0,
                    "hyper":{{"learning_rate":0.03,"minibatch_size":512,
                             "max_epochs":60,"patience":60,"num_restarts":2}},
                    "num_samples":400,"burn_in":50}},
                "n_bootstrap":200}}}}"#,
            dir.path().join("out"),
            dir.path().join("a.csv"),
            dir.path().join("f.csv"),
            dir.path().join("a.csv"),
            dir.path().join("f.csv"),
            dir.path().join("valid.txt"),
        ),
    );
    let output = binary().args(["eval", "--config"]).arg(&config).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let rmse_of = |model: &str| -> f64 {
        report
            .lines()
            .find(|l| l.starts_with(&format!("{model},")))
            .unwrap()
            .split(',')
            .nth(3)
            .unwrap()
            .parse()
            .unwrap()
    };
    let (lvbc, naive) = (rmse_of("LVBC"), rmse_of("NE"));
    assert!(lvbc < naive, "LVBC {lvbc} should beat NE {naive}");
}

#[test]
fn simulate_writes_echo_before_outputs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.json");
    write(
        &config,
        &format!(
            r#"{{"seed":5,"out_dir":{:?},"sim":{{"delta":0.5,"alpha":0.8,"beta":-0.2,
                "sigma2":1.0,"sigma_star2":1.5,"num_quantities":20,
                "instrument_counts":[5],"num_realizations":10}}}}"#,
            dir.path().join("run1")
        ),
    );
    let status = binary().args(["simulate", "--config"]).arg(&config).status().unwrap();
    assert!(status.success());
    let echo = fs::read_to_string(dir.path().join("run1/config_echo.json")).unwrap();
    assert!(echo.contains("\"seed\": 5"));

    // Same config, different out dir: identical sweep bytes.
    let status = binary()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(dir.path().join("run2"))
        .status()
        .unwrap();
    assert!(status.success());
    let a = fs::read(dir.path().join("run1/sweep.csv")).unwrap();
    let b = fs::read(dir.path().join("run2/sweep.csv")).unwrap();
    assert_eq!(a, b);

    // Seed override changes the echo and the outputs.
    let status = binary()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(dir.path().join("run3"))
        .args(["--seed", "6"])
        .status()
        .unwrap();
    assert!(status.success());
    let echo3 = fs::read_to_string(dir.path().join("run3/config_echo.json")).unwrap();
    assert!(echo3.contains("\"seed\": 6"));
    let c = fs::read(dir.path().join("run3/sweep.csv")).unwrap();
    assert_ne!(a, c);
}
