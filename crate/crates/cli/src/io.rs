//! CSV and JSON input/output.
//!
//! All floating-point emission goes through [`fmt_f64`], which prints 17
//! significant digits in scientific notation so parse(emit(x)) == x for
//! every finite value.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use consensus_core::estimators::EstimatorKind;
use consensus_core::gibbs::GibbsRun;
use consensus_core::metrics::EvalReport;
use consensus_core::panel::ForecastPanel;
use consensus_core::synthetic::{Realization, SweepResult};

use crate::error::{CliError, Result, config_err, data_err};

/// Round-trippable decimal formatting: 17 significant digits.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        CliError::Data(format!("line {line}: cannot parse {what} from `{field}`"))
    })
}

fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path)
        .map_err(|e| data_err(format!("cannot open `{}`: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn header_of(reader: &mut csv::Reader<fs::File>, path: &Path) -> Result<Vec<String>> {
    Ok(reader
        .headers()
        .map_err(|e| data_err(format!("`{}`: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Read the long-form forecasts file (`quantity_id,instrument_id,forecast`)
/// and its sibling actuals file (`quantity_id,actual`) into one panel.
pub fn load_panel(forecasts: &Path, actuals: Option<&Path>) -> Result<ForecastPanel> {
    let mut builder = ForecastPanel::builder();

    let mut reader = open_reader(forecasts)?;
    let header = header_of(&mut reader, forecasts)?;
    if header != ["quantity_id", "instrument_id", "forecast"] {
        return Err(CliError::Data(format!(
            "`{}`: expected header `quantity_id,instrument_id,forecast`, found `{}`",
            forecasts.display(),
            header.join(",")
        )));
    }
    for record in reader.records() {
        let record = record.map_err(|e| data_err(format!("`{}`: {e}", forecasts.display())))?;
        let line = record_line(&record);
        if record.len() != 3 {
            return Err(CliError::Data(format!(
                "line {line}: expected 3 fields, found {}",
                record.len()
            )));
        }
        let value = parse_f64(&record[2], line, "forecast")?;
        builder
            .add_forecast(record[0].trim(), record[1].trim(), value)
            .map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
    }

    if let Some(actuals) = actuals {
        let mut reader = open_reader(actuals)?;
        let header = header_of(&mut reader, actuals)?;
        if header != ["quantity_id", "actual"] {
            return Err(CliError::Data(format!(
                "`{}`: expected header `quantity_id,actual`, found `{}`",
                actuals.display(),
                header.join(",")
            )));
        }
        for record in reader.records() {
            let record = record.map_err(|e| data_err(format!("`{}`: {e}", actuals.display())))?;
            let line = record_line(&record);
            if record.len() != 2 {
                return Err(CliError::Data(format!(
                    "line {line}: expected 2 fields, found {}",
                    record.len()
                )));
            }
            let value = parse_f64(&record[1], line, "actual")?;
            builder
                .set_actual(record[0].trim(), value)
                .map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        }
    }
    Ok(builder.build())
}

/// Emit a panel back to the forecasts/actuals schema.
pub fn write_panel(panel: &ForecastPanel, forecasts: &Path, actuals: &Path) -> Result<()> {
    let mut out = String::from("quantity_id,instrument_id,forecast\n");
    for entry in panel.entries() {
        out.push_str(&format!(
            "{},{},{}\n",
            panel.quantity_id(entry.quantity),
            panel.instrument_id(entry.instrument),
            fmt_f64(entry.forecast)
        ));
    }
    write_text(forecasts, &out)?;

    let mut out = String::from("quantity_id,actual\n");
    for q in 0..panel.num_quantities() {
        if let Some(actual) = panel.actual(q) {
            out.push_str(&format!("{},{}\n", panel.quantity_id(q), fmt_f64(actual)));
        }
    }
    write_text(actuals, &out)
}

/// Dense panel view of one synthetic realization (quantities `q<i>`,
/// instruments `a<j>`, truths attached as actuals).
pub fn realization_to_panel(realization: &Realization) -> Result<ForecastPanel> {
    let qw = realization.num_quantities.to_string().len();
    let aw = realization.instrument_count.to_string().len();
    let mut builder = ForecastPanel::builder();
    for q in 0..realization.num_quantities {
        let qid = format!("q{q:0qw$}");
        builder.set_actual(&qid, realization.truths[q]).map_err(data_err)?;
        let (values, _) = realization.row(q);
        for (j, &value) in values.iter().enumerate() {
            builder.add_forecast(&qid, &format!("a{j:0aw$}"), value).map_err(data_err)?;
        }
    }
    Ok(builder.build())
}

/// Predictions for `eval`: a two-column `quantity_id,prediction` (or
/// `quantity_id,actual`) file, or the estimates schema produced by `infer`
/// (the `point_estimate` column is used).
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut reader = open_reader(path)?;
    let header = header_of(&mut reader, path)?;
    let column = match header.iter().position(|h| {
        h == "prediction" || h == "actual" || h == "point_estimate"
    }) {
        Some(idx) if header.first().map(String::as_str) == Some("quantity_id") => idx,
        _ => {
            return Err(CliError::Data(format!(
                "`{}`: expected a `quantity_id` file with a prediction, actual or point_estimate column",
                path.display()
            )));
        }
    };
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| data_err(format!("`{}`: {e}", path.display())))?;
        let line = record_line(&record);
        let value = parse_f64(&record[column], line, &header[column])?;
        if out.insert(record[0].trim().to_string(), value).is_some() {
            return Err(CliError::Data(format!(
                "line {line}: duplicate quantity `{}`",
                record[0].trim()
            )));
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("`{}` contains no rows", path.display())));
    }
    Ok(out)
}

/// `quantity_id,group_id` used for macro averaging.
pub fn read_groups(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = open_reader(path)?;
    let header = header_of(&mut reader, path)?;
    if header != ["quantity_id", "group_id"] {
        return Err(CliError::Data(format!(
            "`{}`: expected header `quantity_id,group_id`, found `{}`",
            path.display(),
            header.join(",")
        )));
    }
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| data_err(format!("`{}`: {e}", path.display())))?;
        out.insert(record[0].trim().to_string(), record[1].trim().to_string());
    }
    Ok(out)
}

/// One quantity id per line; blank lines ignored.
pub fn read_quantity_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| data_err(format!("cannot read `{}`: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| config_err(format!("cannot create `{}`: {e}", parent.display())))?;
    }
    fs::write(path, text)
        .map_err(|e| config_err(format!("cannot write `{}`: {e}", path.display())))
}

pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut out = String::from("instrument_count,estimator,mean_rmse,stderr\n");
    for row in &result.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.instrument_count,
            row.kind,
            fmt_f64(row.mean_rmse),
            fmt_f64(row.stderr)
        ));
    }
    write_text(path, &out)
}

/// Parse a sweep CSV back (used by tests and downstream tooling).
pub fn read_sweep_csv(path: &Path) -> Result<Vec<(usize, EstimatorKind, f64, f64)>> {
    let mut reader = open_reader(path)?;
    let header = header_of(&mut reader, path)?;
    if header != ["instrument_count", "estimator", "mean_rmse", "stderr"] {
        return Err(CliError::Data(format!("`{}`: unexpected sweep header", path.display())));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| data_err(format!("`{}`: {e}", path.display())))?;
        let line = record_line(&record);
        let count = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Data(format!("line {line}: bad instrument count")))?;
        let kind = record[1]
            .trim()
            .parse::<EstimatorKind>()
            .map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        out.push((
            count,
            kind,
            parse_f64(&record[2], line, "mean_rmse")?,
            parse_f64(&record[3], line, "stderr")?,
        ));
    }
    Ok(out)
}

pub fn write_estimates_csv(run: &GibbsRun, path: &Path) -> Result<()> {
    let mut out = String::from("quantity_id,point_estimate,ci_low,ci_high,n_samples\n");
    for (qid, chain) in &run.chains {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            qid,
            fmt_f64(chain.point_estimate),
            fmt_f64(chain.credible_interval.0),
            fmt_f64(chain.credible_interval.1),
            chain.samples.len()
        ));
    }
    write_text(path, &out)
}

/// One report row per model, in the fixed column layout. Macro columns stay
/// empty when no groups were supplied.
pub fn write_report_csv(rows: &[(String, EvalReport)], path: &Path) -> Result<()> {
    let mut out = String::from("model,macro_rmse,macro_mae,micro_rmse,micro_mae,micro_r2\n");
    for (model, report) in rows {
        let macro_rmse = report.macro_rmse.map(|m| fmt_f64(m.point)).unwrap_or_default();
        let macro_mae = report.macro_mae.map(|m| fmt_f64(m.point)).unwrap_or_default();
        out.push_str(&format!(
            "{model},{macro_rmse},{macro_mae},{},{},{}\n",
            fmt_f64(report.micro_rmse.point),
            fmt_f64(report.micro_mae.point),
            fmt_f64(report.micro_r2.point)
        ));
    }
    write_text(path, &out)
}

pub fn write_report_json(rows: &[(String, EvalReport)], path: &Path) -> Result<()> {
    let document: BTreeMap<&str, &EvalReport> =
        rows.iter().map(|(model, report)| (model.as_str(), report)).collect();
    let mut text = serde_json::to_string_pretty(&document)
        .map_err(|e| config_err(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_f64_round_trips_exactly() {
        for value in [
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            -2.5e300,
            6.02e23,
            0.0,
            1.0,
        ] {
            let text = fmt_f64(value);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), value.to_bits(), "{value} -> {text}");
        }
    }
}
