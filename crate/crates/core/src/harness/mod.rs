//! Experiment runners, reports and their on-disk form.

mod config;
pub mod data;
mod experiments;
mod output;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::DiagnosticsReport;
use crate::error::Result;

pub use config::{CostConfig, Experiment, ExperimentConfig, SweepConfig};
pub use experiments::{
    compare, cost_report, prepare, run_linreg, sweep_epsilon, sweep_k, sweep_probes, Comparison,
    Family, Model, Prepared,
};
pub use output::{report_json, strip_timing, write_outputs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact: String,
    pub version: String,
    pub seed: u64,
    /// Where the data came from (generator name or file path).
    pub data_source: String,
    /// Constants the method leaves open, fixed here and labelled as such.
    pub artifact_choices: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub mean_jetsim: f64,
    pub mean_rank_a: f64,
    pub mean_rank_b: f64,
    pub capped_bases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    #[serde(rename = "J")]
    pub j: usize,
    pub n_jet: usize,
    pub models: usize,
    pub probe_passes: u64,
    pub expected_probe_passes: u64,
    pub base_passes: u64,
    pub mean_jetsim: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    /// Risk and accuracy figures keyed by `<metric>/<model>`.
    pub metrics: BTreeMap<String, f64>,
    /// Vectors and other structured by-products.
    pub details: BTreeMap<String, Value>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub forward_passes: BTreeMap<String, u64>,
    pub sweep: Option<Vec<SweepRow>>,
    pub cost_table: Option<Vec<CostRow>>,
    pub wall_time_s: f64,
    /// Per-model `(epoch, loss)`; written as CSV, not part of the JSON.
    #[serde(skip)]
    pub training_logs: BTreeMap<String, Vec<(usize, f64)>>,
}

impl ExperimentReport {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

/// Run the configured experiment end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let mut report = match cfg.experiment {
        Experiment::Linreg => run_linreg(cfg)?,
        e if e.is_comparison() => experiments::run_comparison(cfg)?,
        Experiment::SweepEps => sweep_epsilon(cfg)?,
        Experiment::SweepProbes => sweep_probes(cfg)?,
        Experiment::SweepK => sweep_k(cfg)?,
        Experiment::Cost => cost_report(cfg)?,
        _ => unreachable!("every experiment is handled"),
    };
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
