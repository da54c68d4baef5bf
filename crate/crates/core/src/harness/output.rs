use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use super::ExperimentReport;
use crate::diagnostics::csv_float;
use crate::error::Result;

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Remove every `wall_time_s` key so that two runs can be compared byte for byte.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_time_s");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Long-format `(experiment, series, x, y)` rows for external plotting.
fn plot_rows(report: &ExperimentReport) -> Vec<(String, f64, f64)> {
    let mut rows = Vec::new();
    if let Some(d) = &report.diagnostics {
        for p in &d.pairs {
            for e in &p.entries {
                rows.push((format!("jetsim:{}", p.label), e.base_id as f64, e.score));
            }
        }
        for t in &d.taps {
            for e in &t.entries {
                rows.push((format!("rank:{}", t.label), e.base_id as f64, e.rank as f64));
            }
        }
    }
    for r in report.sweep.iter().flatten() {
        rows.push((
            format!("mean_jetsim:{}", r.parameter),
            r.value,
            r.mean_jetsim,
        ));
        rows.push((
            format!("mean_rank_a:{}", r.parameter),
            r.value,
            r.mean_rank_a,
        ));
        rows.push((
            format!("mean_rank_b:{}", r.parameter),
            r.value,
            r.mean_rank_b,
        ));
    }
    for c in report.cost_table.iter().flatten() {
        rows.push(("probe_passes".into(), c.j as f64, c.probe_passes as f64));
        rows.push(("wall_time_s".into(), c.j as f64, c.wall_time_s));
    }
    for (model, log) in &report.training_logs {
        for &(epoch, loss) in log {
            rows.push((format!("loss:{model}"), epoch as f64, loss));
        }
    }
    rows
}

/// Write `report.json` and the CSV tables that apply to this report.
pub fn write_outputs(report: &ExperimentReport, dir: &Path, plot_data: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = create(dir, "report.json")?;
    f.write_all(report_json(report)?.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;

    if let Some(d) = &report.diagnostics {
        d.write_csvs(dir)?;
    }
    if let Some(rows) = &report.sweep {
        let mut w = csv::Writer::from_writer(create(dir, "sweep.csv")?);
        w.write_record([
            "parameter",
            "value",
            "mean_jetsim",
            "mean_rank_a",
            "mean_rank_b",
            "capped_bases",
        ])?;
        for r in rows {
            w.write_record([
                r.parameter.clone(),
                csv_float(r.value),
                csv_float(r.mean_jetsim),
                csv_float(r.mean_rank_a),
                csv_float(r.mean_rank_b),
                r.capped_bases.to_string(),
            ])?;
        }
        w.flush()?;
    }
    if let Some(rows) = &report.cost_table {
        let mut w = csv::Writer::from_writer(create(dir, "cost.csv")?);
        w.write_record([
            "J",
            "n_jet",
            "models",
            "probe_passes",
            "expected_probe_passes",
            "base_passes",
            "mean_jetsim",
            "wall_time_s",
        ])?;
        for r in rows {
            w.write_record([
                r.j.to_string(),
                r.n_jet.to_string(),
                r.models.to_string(),
                r.probe_passes.to_string(),
                r.expected_probe_passes.to_string(),
                r.base_passes.to_string(),
                csv_float(r.mean_jetsim),
                csv_float(r.wall_time_s),
            ])?;
        }
        w.flush()?;
    }
    for (model, log) in &report.training_logs {
        let mut w = csv::Writer::from_writer(create(dir, &format!("train_{model}.csv"))?);
        w.write_record(["epoch", "loss"])?;
        for &(epoch, loss) in log {
            w.write_record([epoch.to_string(), csv_float(loss)])?;
        }
        w.flush()?;
    }
    if plot_data {
        let mut w = csv::Writer::from_writer(create(dir, "plot_data.csv")?);
        w.write_record(["experiment", "series", "x", "y"])?;
        let name = report.experiment.to_string();
        for (series, x, y) in plot_rows(report) {
            w.write_record([name.clone(), series, csv_float(x), csv_float(y)])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn strip_timing_is_recursive() {
        let mut v = json!({
            "wall_time_s": 1.0,
            "a": {"wall_time_s": 2.0, "b": [{"wall_time_s": 3.0, "c": 4}]}
        });
        strip_timing(&mut v);
        assert_eq!(v, json!({"a": {"b": [{"c": 4}]}}));
    }
}
